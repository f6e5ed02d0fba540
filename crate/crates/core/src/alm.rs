//! Augmented Lagrangian treatment of the expectation constraint
//! E[y(s)] ∈ A and the outer loop coupling the FP and HJB solvers.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fp::{fp_solve, FpOptions, FpSolution};
use crate::generator::Discretization;
use crate::grid::{Field, TimeGrid};
use crate::hjb::{hjb_solve, ConstraintForcing, HjbOptions, HjbSolution};
use crate::model::{BoxSet, ControlProblem, MAX_DIM};
use crate::par;

pub fn project_box(y: &[f64], set: &BoxSet) -> Vec<f64> {
    set.project(y)
}

/// Moreau–Yosida regularised subgradient (y − P_A(y))/λ.
pub fn my_subgradient(y: &[f64], lambda: f64, set: &BoxSet) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("penalty parameter must be positive, got {lambda}")));
    }
    Ok(y.iter().zip(set.project(y)).map(|(y, p)| (y - p) / lambda).collect())
}

/// μ_new(s) = ρ·(∂χ_A)_λ(E(s) + λμ_prev(s)) + (1 − ρ)·μ_prev(s).
pub fn update_multiplier(
    mu_prev: &[Vec<f64>],
    expectations: &[Vec<f64>],
    lambda: f64,
    rho: f64,
    set: &BoxSet,
) -> Result<Vec<Vec<f64>>> {
    if mu_prev.len() != expectations.len() {
        return Err(Error::invalid("multiplier and expectation trajectories differ in length"));
    }
    mu_prev
        .iter()
        .zip(expectations)
        .map(|(mu, e)| {
            let shifted: Vec<f64> = e.iter().zip(mu).map(|(e, m)| e + lambda * m).collect();
            let g = my_subgradient(&shifted, lambda, set)?;
            Ok(g.iter().zip(mu).map(|(g, m)| rho * g + (1.0 - rho) * m).collect())
        })
        .collect()
}

/// Space-time L² distance normalised by (P_max − P_min)·√(|[t,T]|·|Ω|).
pub fn control_change_norm(a: &Field, b: &Field, width: f64) -> f64 {
    let mesh = &a.mesh;
    let w = mesh.weights();
    let tw = a.grid.weights();
    let sum: f64 = (0..a.grid.len())
        .map(|m| {
            let inner: f64 = a.slice(m).iter().zip(b.slice(m)).zip(w).map(|((x, y), w)| w * (x - y) * (x - y)).sum();
            tw[m] * inner
        })
        .sum();
    let measure = mesh.volume() * (a.grid.t_end - a.grid.t0);
    (sum / measure).sqrt() / width
}

/// ‖a − b‖ / ‖b‖ in the space-time L² norm; 0 when both vanish.
pub fn relative_l2_difference(a: &Field, b: &Field) -> f64 {
    let w = a.mesh.weights();
    let tw = a.grid.weights();
    let (mut num, mut den) = (0.0, 0.0);
    for m in 0..a.grid.len() {
        for ((x, y), w) in a.slice(m).iter().zip(b.slice(m)).zip(w) {
            num += tw[m] * w * (x - y) * (x - y);
            den += tw[m] * w * y * y;
        }
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// E[y] at every time level.
pub fn expectation_trajectory(fp: &FpSolution) -> Vec<Vec<f64>> {
    let n = fp.density.mesh.dim();
    (0..fp.density.grid.len()).map(|m| (0..n).map(|a| fp.mean(m, a)).collect()).collect()
}

/// Largest distance of E[y(s_m)] from A over m ≥ 1; the initial law is data.
pub fn constraint_violation(expectations: &[Vec<f64>], set: &BoxSet) -> f64 {
    expectations.iter().skip(1).map(|e| set.distance(e)).fold(0.0, f64::max)
}

/// J = Δs Σ_m ∫φ^{m+1} f(s_m + Δs/2, y, u^m) dy + ∫φ^M g dy, the quadrature
/// consistent with the implicit FP step.
pub fn expected_objective<P: ControlProblem + ?Sized>(problem: &P, fp: &FpSolution, policy: &Field) -> f64 {
    let mesh = &fp.density.mesh;
    let grid = &fp.density.grid;
    let n = mesh.dim();
    let w = mesh.weights();
    let nodes: Vec<[f64; MAX_DIM]> = (0..mesh.len())
        .map(|i| {
            let mut y = [0.0; MAX_DIM];
            mesh.node(i, &mut y);
            y
        })
        .collect();
    let running: Vec<f64> = par::map_range(grid.steps, |m| {
        let s = grid.midpoint(m);
        let phi = fp.density.slice(m + 1);
        let u = policy.slice(m);
        (0..mesh.len()).map(|i| w[i] * phi[i] * problem.running_cost(s, &nodes[i][..n], u[i])).sum::<f64>()
    });
    let phi_t = fp.density.slice(grid.steps);
    let terminal: f64 = (0..mesh.len()).map(|i| w[i] * phi_t[i] * problem.terminal_cost(&nodes[i][..n])).sum();
    grid.dt * par::pairwise_sum(&running) + terminal
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlmParams {
    pub lambda0: f64,
    pub lambda_min: f64,
    pub tau0: f64,
    pub tau_min: f64,
    pub zeta_min: f64,
    pub eta_min: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub rho: f64,
    pub max_iter: usize,
    pub penalty_hits: usize,
}

impl Default for AlmParams {
    fn default() -> Self {
        Self {
            lambda0: 50.0,
            lambda_min: 5.0,
            tau0: 0.1,
            tau_min: 1e-3,
            zeta_min: 1e-3,
            eta_min: 0.05,
            omega1: 0.5,
            omega2: 0.5,
            rho: 1.0,
            max_iter: 500,
            penalty_hits: 3,
        }
    }
}

impl AlmParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(field, msg)) };
        check(self.lambda_min > 0.0 && self.lambda_min <= self.lambda0, "alm.lambda0", "need 0 < λ* ≤ λ⁰")?;
        check(self.tau_min > 0.0 && self.tau_min <= self.tau0, "alm.tau0", "need 0 < τ* ≤ τ⁰")?;
        check(self.zeta_min > 0.0, "alm.zeta_min", "must be positive")?;
        check(self.eta_min > 0.0, "alm.eta_min", "must be positive")?;
        check(self.omega1 > 0.0 && self.omega1 < 1.0, "alm.omega1", "must lie in (0, 1)")?;
        check(self.omega2 > 0.0 && self.omega2 < 1.0, "alm.omega2", "must lie in (0, 1)")?;
        check(self.rho > 0.0 && self.rho <= 1.0, "alm.rho", "must lie in (0, 1]")?;
        check(self.max_iter > 0, "alm.max_iter", "must be positive")?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Penalty,
    Multiplier,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub control_change: f64,
    pub multiplier_change: f64,
    pub violation: f64,
    pub lambda: f64,
    pub tau: f64,
    pub phase: Phase,
    pub wall_seconds: f64,
}

pub struct AlmOutcome {
    /// Density under the returned policy's predecessor (the last FP solve).
    pub fp: FpSolution,
    pub hjb: HjbSolution,
    pub mu: Vec<Vec<f64>>,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub lambda: f64,
}

impl AlmOutcome {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn expectations(&self) -> Vec<Vec<f64>> {
        expectation_trajectory(&self.fp)
    }
}

pub fn run_alm<P: ControlProblem + ?Sized>(
    problem: &P,
    disc: &Discretization,
    grid: &TimeGrid,
    phi0: &[f64],
    params: &AlmParams,
    fp_opts: &FpOptions,
    hjb_opts: &HjbOptions,
) -> Result<AlmOutcome> {
    params.validate()?;
    let n = problem.dim();
    let set = problem.constraint();
    if set.dim() != n {
        return Err(Error::invalid("constraint set dimension differs from the state dimension"));
    }
    let bounds = problem.control_bounds();
    let mut policy = Field::zeros(disc.mesh.clone(), *grid, "MW");
    let start = bounds.clamp(0.0);
    if start != 0.0 {
        policy = Field::from_values(disc.mesh.clone(), *grid, "MW", vec![start; policy.values().len()])?;
    }
    let mut mu = vec![vec![0.0; n]; grid.len()];
    let mut lambda = params.lambda0;
    let mut tau = params.tau0;
    let mut phase = Phase::Penalty;
    let mut hits = 0;
    let mut history = Vec::new();
    type Snapshot = (f64, FpSolution, HjbSolution, Vec<Vec<f64>>, f64);
    let mut best: Option<Snapshot> = None;
    let clock = Instant::now();
    for k in 1..=params.max_iter {
        let fp = fp_solve(problem, disc, grid, &policy, phi0, fp_opts)?;
        let expectations = expectation_trajectory(&fp);
        let forcing = ConstraintForcing::new(&expectations, &mu, lambda, set)?;
        let hjb = hjb_solve(problem, disc, grid, Some(&forcing), hjb_opts)?;
        let change = control_change_norm(&hjb.control, &policy, bounds.width());
        let violation = constraint_violation(&expectations, set);
        let candidate = update_multiplier(&mu, &expectations, lambda, params.rho, set)?;
        let mu_change = candidate
            .iter()
            .zip(&mu)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        history.push(IterationRecord {
            iteration: k,
            objective: expected_objective(problem, &fp, &policy),
            control_change: change,
            multiplier_change: mu_change,
            violation,
            lambda,
            tau,
            phase,
            wall_seconds: clock.elapsed().as_secs_f64(),
        });
        if change <= tau {
            if change <= params.tau_min && mu_change <= params.zeta_min && violation <= params.eta_min {
                return Ok(AlmOutcome { fp, hjb, mu, history, converged: true, lambda });
            }
            hits += 1;
            if phase == Phase::Multiplier {
                mu = candidate;
            } else if hits >= params.penalty_hits {
                phase = Phase::Multiplier;
            }
            tau = (params.omega1 * tau).max(params.tau_min);
            lambda = (params.omega2 * lambda).max(params.lambda_min);
        }
        let merit = (violation / params.eta_min).max(change / params.tau_min);
        policy = hjb.control.clone();
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, fp, hjb, mu.clone(), lambda));
        }
    }
    let (_, fp, hjb, mu, lambda) = best.expect("at least one iteration ran");
    Ok(AlmOutcome { fp, hjb, mu, history, converged: false, lambda })
}
