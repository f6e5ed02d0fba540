//! Comparison controllers: price-threshold and time-of-use rules, and a
//! sampled stochastic MPC.

pub mod mpc;
pub mod rules;

use serde::Serialize;

use crate::error::Result;
use crate::grid::TimeGrid;
use crate::model::{ControlProblem, InitialDistribution, PvProblem};
use crate::sim::{euler_maruyama, evaluate_revenue, PathBundle, Policy, RevenueStats};

pub use mpc::{mpc_run, mpc_stage_solve, MpcParams, MpcRun, SaaStage, StageSolution};
pub use rules::{price_threshold_policy, tou_policy, ThresholdParams, TouSchedule};

/// Open-loop control, constant on [t0 + kΔs, t0 + (k+1)Δs).
pub struct TimePolicy {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl Policy for TimePolicy {
    fn control(&self, s: f64, _m: usize, _x: &[f64]) -> f64 {
        let k = ((s - self.t0) / self.dt + 1e-9).floor().max(0.0) as usize;
        self.values[k.min(self.values.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    PriceThreshold,
    TimeOfUse,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::PriceThreshold => "price_threshold",
            Rule::TimeOfUse => "tou",
        }
    }
}

pub struct RulePolicy<'a> {
    pub rule: Rule,
    pub problem: &'a PvProblem,
    pub threshold: ThresholdParams,
    pub schedule: &'a TouSchedule,
    pub dt: f64,
}

impl Policy for RulePolicy<'_> {
    fn control(&self, s: f64, _m: usize, x: &[f64]) -> f64 {
        let b = self.problem.control_bounds();
        let eb = self.problem.energy_bounds();
        match self.rule {
            Rule::PriceThreshold => price_threshold_policy(x[1], x[2], &self.threshold, &b, eb, self.dt),
            Rule::TimeOfUse => tou_policy(s, x[2], self.schedule, &b, eb, self.dt),
        }
    }
}

/// Pathwise audit of a rule run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleAudit {
    /// Steps where a nonzero action's deterministic update ℰ − Δs·u left
    /// [ℰ_min, ℰ_max] from a state inside it.
    pub guard_violations: usize,
    /// Largest excursion outside [ℰ_min, ℰ_max] caused by noise.
    pub max_overshoot: f64,
}

pub fn audit_rule(bundle: &PathBundle, energy_bounds: (f64, f64)) -> RuleAudit {
    let (lo, hi) = energy_bounds;
    let g = &bundle.grid;
    let mut guard_violations = 0;
    for p in 0..bundle.paths {
        if bundle.failed[p] {
            continue;
        }
        for m in 0..g.steps {
            let e = bundle.state(p, m)[2];
            let u = bundle.control(p, m);
            let next = e - g.dt * u;
            if u != 0.0 && (lo..=hi).contains(&e) && !(lo..=hi).contains(&next) {
                guard_violations += 1;
            }
        }
    }
    RuleAudit { guard_violations, max_overshoot: bundle.max_overshoot(2, lo, hi) }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RuleEvaluation {
    pub rule: Rule,
    pub revenue: RevenueStats,
    pub audit: RuleAudit,
    #[serde(skip)]
    pub bundle: PathBundle,
}

/// Monte Carlo evaluation of a rule with the guard step equal to the
/// simulation step.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_rule(
    rule: Rule,
    problem: &PvProblem,
    threshold: ThresholdParams,
    schedule: &TouSchedule,
    init: &InitialDistribution,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<RuleEvaluation> {
    let policy = RulePolicy { rule, problem, threshold, schedule, dt: grid.dt };
    let bundle = euler_maruyama(problem, &policy, init, grid, paths, seed)?;
    let revenue = evaluate_revenue(&bundle, problem);
    let audit = audit_rule(&bundle, problem.energy_bounds());
    Ok(RuleEvaluation { rule, revenue, audit, bundle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::TimeCurve;

    #[test]
    fn rules_keep_the_guard_on_every_path() {
        let p = PvProblem::default_scenario();
        let init = InitialDistribution::pv_default(&p);
        let grid = TimeGrid::new(0.0, 24.0, 0.5).unwrap();
        for rule in [Rule::PriceThreshold, Rule::TimeOfUse] {
            let ev = evaluate_rule(rule, &p, ThresholdParams::default(), &TouSchedule::default(), &init, &grid, 500, 4)
                .unwrap();
            assert_eq!(ev.audit.guard_violations, 0, "{rule:?}");
            for k in 0..ev.bundle.paths {
                for m in 0..grid.steps {
                    assert!([-1.0, 0.0, 1.0].contains(&ev.bundle.control(k, m)));
                }
            }
        }
    }

    #[test]
    fn zero_price_rule_revenue_is_zero() {
        let mut p = PvProblem::default_scenario();
        p.sde.theta_pi = TimeCurve::Constant(0.0);
        p.sde.sigma_pp = 0.0;
        p.terminal_price = 0.0;
        let init = InitialDistribution::new(vec![0.3, 0.0, 2.0], vec![0.01, 1e-300, 0.01]).unwrap();
        let grid = TimeGrid::new(0.0, 24.0, 0.5).unwrap();
        let ev = evaluate_rule(Rule::TimeOfUse, &p, ThresholdParams::default(), &TouSchedule::default(), &init, &grid, 100, 1)
            .unwrap();
        assert!(ev.revenue.mean.abs() < 1e-100);
    }

    #[test]
    fn time_policy_is_piecewise_constant() {
        let tp = TimePolicy { t0: 0.0, dt: 0.5, values: vec![1.0, -1.0, 0.0] };
        assert_eq!(tp.control(0.0, 0, &[]), 1.0);
        assert_eq!(tp.control(0.49, 0, &[]), 1.0);
        assert_eq!(tp.control(0.5, 1, &[]), -1.0);
        assert_eq!(tp.control(7.0, 9, &[]), 0.0);
    }
}
