//! Receding-horizon stochastic MPC for the PV plant.
//!
//! Each stage maximises a sample-average approximation of the objective
//! over an open-loop control sequence. Gradients come from the discrete
//! adjoint of the Euler–Maruyama recursion along every frozen sample path;
//! the expected-energy bounds are handled by an augmented Lagrangian loop
//! around projected gradient ascent.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::alm::my_subgradient;
use crate::error::{Error, Result};
use crate::model::{BoxSet, ControlBounds, ControlProblem, Mat, PvProblem, MAX_DIM};
use crate::par;
use crate::sim::path_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcParams {
    /// Stage step (h).
    pub dt: f64,
    pub samples: usize,
    /// Projected-ascent iterations per multiplier update.
    pub max_iter: usize,
    /// Initial ascent step; adapted by backtracking.
    pub step_size: f64,
    pub outer_iter: usize,
    /// Moreau–Yosida parameter of the expected-energy penalty.
    pub penalty: f64,
    /// Inner stationarity tolerance, relative to the largest gradient
    /// component and the control range.
    pub tol: f64,
    /// Accepted expected-energy violation (MWh).
    pub eta: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self { dt: 0.5, samples: 1000, max_iter: 200, step_size: 0.01, outer_iter: 10, penalty: 0.1, tol: 1e-3, eta: 0.05 }
    }
}

impl MpcParams {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, m: String| Err(Error::config(format!("benchmark.mpc.{f}"), m));
        if !(self.dt > 0.0) {
            return field("dt", format!("stage step must be positive, got {}", self.dt));
        }
        if self.samples < 100 {
            return field("samples", format!("at least 100 samples per stage are required, got {}", self.samples));
        }
        if self.max_iter == 0 || self.outer_iter == 0 {
            return field("max_iter", "iteration caps must be positive".into());
        }
        for (name, v) in [("step_size", self.step_size), ("penalty", self.penalty), ("tol", self.tol), ("eta", self.eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return field(name, format!("must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Frozen-sample stage problem on [s0, s0 + steps·dt] from a known state.
///
/// Z and Π do not depend on the control, so their sample paths are built
/// once. Only ℰ, with ℰ_{m+1} = ℰ_m(1 + σ_ℰℰ√Δs ξ) − u_m Δs, is re-run per
/// evaluation.
pub struct SaaStage<'a> {
    problem: &'a PvProblem,
    pub s0: f64,
    pub dt: f64,
    pub steps: usize,
    x0: [f64; MAX_DIM],
    samples: usize,
    /// Π_m per (path, step).
    price: Vec<f64>,
    /// 1 + σ_ℰℰ√Δs ξ per (path, step).
    gain: Vec<f64>,
    /// Δs Σ_m Π_m P_solar(s_m, Z_m) per path.
    base: Vec<f64>,
    set: BoxSet,
}

/// Augmented objective, plain SAA objective, E[ℰ] per level and gradient.
#[derive(Clone, Debug)]
pub struct StageEval {
    pub augmented: f64,
    pub objective: f64,
    pub energy: Vec<f64>,
    pub gradient: Vec<f64>,
}

impl<'a> SaaStage<'a> {
    pub fn new(problem: &'a PvProblem, s0: f64, x0: [f64; 3], dt: f64, steps: usize, samples: usize, seed: u64) -> Self {
        let sq = dt.sqrt();
        let per_path = par::map_range(samples, |p| {
            let mut rng = path_rng(seed, p as u64);
            let mut x = x0;
            let mut b = [0.0; MAX_DIM];
            let mut sig: Mat = [[0.0; MAX_DIM]; MAX_DIM];
            let mut price = Vec::with_capacity(steps);
            let mut gain = Vec::with_capacity(steps);
            let mut base = 0.0;
            for m in 0..steps {
                let xi: [f64; MAX_DIM] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let s = s0 + m as f64 * dt;
                price.push(x[1]);
                gain.push(1.0 + problem.sde.sigma_ee * sq * xi[2]);
                base += dt * x[1] * problem.solar_power(s, x[0]);
                problem.drift(s, &x, 0.0, &mut b);
                problem.diffusion(s, &x, &mut sig);
                for i in 0..2 {
                    let noise: f64 = (0..MAX_DIM).map(|j| sig[i][j] * xi[j]).sum();
                    x[i] += b[i] * dt + noise * sq;
                }
            }
            (price, gain, base)
        });
        let mut price = Vec::with_capacity(samples * steps);
        let mut gain = Vec::with_capacity(samples * steps);
        let mut base = Vec::with_capacity(samples);
        for (p, g, b) in per_path {
            price.extend(p);
            gain.extend(g);
            base.push(b);
        }
        let (lo, hi) = problem.energy_bounds();
        let set = BoxSet::new(vec![lo], vec![hi]).expect("energy bounds are ordered");
        Self { problem, s0, dt, steps, x0, samples, price, gain, base, set }
    }

    fn row<'v>(&self, v: &'v [f64], p: usize) -> &'v [f64] {
        &v[p * self.steps..(p + 1) * self.steps]
    }

    /// ℰ at every level along path p, and the path revenue.
    fn forward(&self, p: usize, u: &[f64]) -> (Vec<f64>, f64) {
        let price = self.row(&self.price, p);
        let gain = self.row(&self.gain, p);
        let mut e = Vec::with_capacity(self.steps + 1);
        let mut x = self.x0[2];
        e.push(x);
        let mut revenue = self.base[p];
        for m in 0..self.steps {
            revenue += self.dt * price[m] * u[m];
            x = x * gain[m] - u[m] * self.dt;
            e.push(x);
        }
        (e, revenue + self.problem.terminal_price * x)
    }

    /// Moreau–Yosida values ν_m = (∂χ_A)_λ(E_m + λμ_m) for m ≥ 1 (ν_0 = 0).
    fn penalty_slopes(&self, energy: &[f64], mu: &[f64], lambda: f64) -> Vec<f64> {
        let mut nu = vec![0.0; self.steps + 1];
        for m in 1..=self.steps {
            nu[m] = my_subgradient(&[energy[m] + lambda * mu[m]], lambda, &self.set).expect("penalty is positive")[0];
        }
        nu
    }

    /// J̄ − Σ_{m≥1} [dist²(E_m + λμ_m, A) − (λμ_m)²]/(2λ) and its gradient.
    pub fn evaluate(&self, u: &[f64], mu: &[f64], lambda: f64) -> StageEval {
        assert_eq!(u.len(), self.steps);
        assert_eq!(mu.len(), self.steps + 1);
        let paths = par::map_range(self.samples, |p| self.forward(p, u));
        let values: Vec<f64> = paths.iter().map(|(_, v)| *v).collect();
        let objective = par::pairwise_sum(&values) / self.samples as f64;
        let energy: Vec<f64> = (0..=self.steps)
            .map(|m| par::pairwise_sum(&paths.iter().map(|(e, _)| e[m]).collect::<Vec<_>>()) / self.samples as f64)
            .collect();
        let mut penalty = 0.0;
        for m in 1..=self.steps {
            let shifted = energy[m] + lambda * mu[m];
            let d = self.set.distance(&[shifted]);
            penalty += (d * d - (lambda * mu[m]).powi(2)) / (2.0 * lambda);
        }
        let nu = self.penalty_slopes(&energy, mu, lambda);
        let per_path = par::map_range(self.samples, |p| self.adjoint(p, &nu));
        let gradient = (0..self.steps)
            .map(|m| par::pairwise_sum(&per_path.iter().map(|g| g[m]).collect::<Vec<_>>()) / self.samples as f64)
            .collect();
        StageEval { augmented: objective - penalty, objective, energy, gradient }
    }

    /// Discrete adjoint of the ℰ recursion along one path. Z and Π carry no
    /// control sensitivity, and ∂ℰ_{m+1}/∂ℰ_m is the step gain.
    fn adjoint(&self, p: usize, nu: &[f64]) -> Vec<f64> {
        let price = self.row(&self.price, p);
        let gain = self.row(&self.gain, p);
        let mut grad = vec![0.0; self.steps];
        let mut lam = self.problem.terminal_price - nu[self.steps];
        for m in (0..self.steps).rev() {
            // b_ℰ = −u, ∂f/∂u = Π.
            grad[m] = self.dt * (price[m] - lam);
            lam = gain[m] * lam - nu[m];
        }
        grad
    }

    /// E[ℰ_m] under `u` without gradients.
    pub fn energy(&self, u: &[f64]) -> Vec<f64> {
        self.evaluate(u, &vec![0.0; self.steps + 1], 1.0).energy
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageSolution {
    pub controls: Vec<f64>,
    pub objective: f64,
    pub energy: Vec<f64>,
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Gradient of the augmented objective at the returned controls.
    #[serde(skip)]
    pub gradient: Vec<f64>,
}

/// max_m |P(u_m + g_m·w/‖g‖∞) − u_m| / w with w = P_max − P_min: the
/// projected step of unit length along the normalised gradient.
fn stationarity(u: &[f64], g: &[f64], bounds: &ControlBounds) -> f64 {
    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if gmax == 0.0 {
        return 0.0;
    }
    let w = bounds.width();
    u.iter().zip(g).map(|(x, d)| (bounds.clamp(x + d * w / gmax) - x).abs() / w).fold(0.0, f64::max)
}

/// Accelerated projected gradient ascent inside an augmented Lagrangian
/// loop on the expected-energy bounds.
pub fn mpc_stage_solve(stage: &SaaStage<'_>, params: &MpcParams, warm: Option<&[f64]>) -> StageSolution {
    let bounds = stage.problem.control_bounds();
    let n = stage.steps;
    let mut u: Vec<f64> = match warm {
        Some(w) if w.len() == n => w.iter().map(|v| bounds.clamp(*v)).collect(),
        _ => vec![bounds.clamp(0.0); n],
    };
    let mut mu = vec![0.0; n + 1];
    let lambda = params.penalty;
    let mut step = params.step_size;
    let mut iterations = 0;
    let mut best: Option<StageSolution> = None;
    for _ in 0..params.outer_iter {
        let mut eval = stage.evaluate(&u, &mu, lambda);
        let mut settled = stationarity(&u, &eval.gradient, &bounds) <= params.tol;
        // Accelerated projected ascent with backtracking on the quadratic
        // upper model and a restart whenever the objective decreases.
        let mut y = u.clone();
        let mut at_y = eval.clone();
        let mut t = 1.0f64;
        for _ in 0..params.max_iter {
            if settled {
                break;
            }
            iterations += 1;
            let mut accepted = None;
            for _ in 0..60 {
                let cand: Vec<f64> = y.iter().zip(&at_y.gradient).map(|(x, g)| bounds.clamp(x + step * g)).collect();
                let lin: f64 = cand.iter().zip(&y).zip(&at_y.gradient).map(|((c, x), g)| (c - x) * g).sum();
                let sq: f64 = cand.iter().zip(&y).map(|(c, x)| (c - x) * (c - x)).sum();
                let next = stage.evaluate(&cand, &mu, lambda);
                if next.augmented >= at_y.augmented + lin - sq / (2.0 * step) - 1e-12 * at_y.augmented.abs() {
                    accepted = Some((cand, next));
                    break;
                }
                step *= 0.5;
            }
            let Some((cand, next)) = accepted else {
                settled = true;
                break;
            };
            if next.augmented < eval.augmented {
                // Restart from the last iterate without momentum.
                t = 1.0;
                y = u.clone();
                at_y = eval.clone();
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = cand.iter().zip(&u).map(|(c, p)| bounds.clamp(c + beta * (c - p))).collect();
            t = t_next;
            u = cand;
            eval = next;
            settled = stationarity(&u, &eval.gradient, &bounds) <= params.tol;
            at_y = if beta == 0.0 { eval.clone() } else { stage.evaluate(&y, &mu, lambda) };
            step *= 1.5;
        }
        let violation = eval.energy.iter().skip(1).map(|e| stage.set.distance(&[*e])).fold(0.0, f64::max);
        let candidate = StageSolution {
            controls: u.clone(),
            objective: eval.objective,
            energy: eval.energy.clone(),
            violation,
            iterations,
            converged: settled && violation <= params.eta,
            gradient: eval.gradient.clone(),
        };
        let better = match &best {
            None => true,
            _ if candidate.converged => true,
            Some(b) => (candidate.violation <= params.eta, candidate.objective) > (b.violation <= params.eta, b.objective)
                || (b.violation > params.eta && candidate.violation < b.violation),
        };
        if better {
            best = Some(candidate.clone());
        }
        if candidate.converged {
            break;
        }
        mu = stage.penalty_slopes(&eval.energy, &mu, lambda);
    }
    let mut out = best.expect("at least one outer iteration runs");
    out.iterations = iterations;
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub time: f64,
    pub iterations: usize,
    pub converged: bool,
    pub violation: f64,
}

/// Applied controls and the expected state trajectory of a receding-horizon run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MpcRun {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<[f64; 3]>,
    pub controls: Vec<f64>,
    pub stages: Vec<StageReport>,
}

impl MpcRun {
    pub fn converged(&self) -> bool {
        self.stages.iter().all(|s| s.converged)
    }
}

fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed ^ (stage as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Solves a stage, applies its first control and moves to the expected next
/// state E[X_{k+1}] = x_k + b(s_k, x_k, u_k)Δs, until T.
pub fn mpc_run(problem: &PvProblem, x0: [f64; 3], params: &MpcParams, seed: u64) -> Result<MpcRun> {
    params.validate()?;
    let (t0, t1) = problem.horizon;
    let k = (t1 - t0) / params.dt;
    if (k - k.round()).abs() > 1e-9 {
        return Err(Error::invalid(format!("MPC step {} does not divide the horizon", params.dt)));
    }
    let stages = k.round() as usize;
    let mut x = x0;
    let mut states = vec![x];
    let mut controls = Vec::with_capacity(stages);
    let mut reports = Vec::with_capacity(stages);
    let mut warm: Vec<f64> = Vec::new();
    for k in 0..stages {
        let s = t0 + k as f64 * params.dt;
        let stage = SaaStage::new(problem, s, x, params.dt, stages - k, params.samples, stage_seed(seed, k));
        let sol = mpc_stage_solve(&stage, params, if warm.is_empty() { None } else { Some(&warm) });
        let u = sol.controls[0];
        let mut b = [0.0; 3];
        problem.drift(s, &x, u, &mut b);
        for i in 0..3 {
            x[i] += b[i] * params.dt;
        }
        states.push(x);
        controls.push(u);
        reports.push(StageReport { time: s, iterations: sol.iterations, converged: sol.converged, violation: sol.violation });
        warm = sol.controls[1..].to_vec();
    }
    Ok(MpcRun { t0, dt: params.dt, states, controls, stages: reports })
}
