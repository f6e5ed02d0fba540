//! Euler–Maruyama path simulation, Monte Carlo policy evaluation, expected
//! controls and hourly day-ahead bids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, TimeGrid};
use crate::model::{ControlBounds, ControlProblem, InitialDistribution, Mat, PvProblem, MAX_DIM};
use crate::par;

/// Feedback law evaluated along simulated paths. `m` is the index of the
/// simulation step starting at `s`.
pub trait Policy: Sync {
    fn control(&self, s: f64, m: usize, x: &[f64]) -> f64;
}

impl<F: Fn(f64, &[f64]) -> f64 + Sync> Policy for F {
    fn control(&self, s: f64, _m: usize, x: &[f64]) -> f64 {
        self(s, x)
    }
}

/// Feedback stored on a mesh, possibly over a subset of the state.
///
/// The slice used at time `s` is the one of the policy time step containing
/// `s`; values between nodes are multilinear, clamped to the mesh box and
/// snapped to {P_min, 0, P_max} when `snap` is set.
pub struct FieldPolicy<'a> {
    pub field: &'a Field,
    /// Full-state index of each mesh axis.
    pub dims: Vec<usize>,
    pub bounds: ControlBounds,
    pub snap: bool,
}

impl<'a> FieldPolicy<'a> {
    pub fn new(field: &'a Field, dims: Vec<usize>, bounds: ControlBounds) -> Result<Self> {
        if dims.len() != field.mesh.dim() {
            return Err(Error::invalid("one state index per policy mesh axis is required"));
        }
        let snap = is_bang_bang(field, &bounds);
        Ok(Self { field, dims, bounds, snap })
    }

    fn slice_index(&self, s: f64) -> usize {
        let g = &self.field.grid;
        let k = ((s - g.t0) / g.dt + 1e-9).floor();
        (k.max(0.0) as usize).min(g.steps.saturating_sub(1))
    }
}

impl Policy for FieldPolicy<'_> {
    fn control(&self, s: f64, _m: usize, x: &[f64]) -> f64 {
        let mut p = [0.0; MAX_DIM];
        for (k, &d) in self.dims.iter().enumerate() {
            p[k] = x[d];
        }
        let u = self.field.mesh.interpolate(self.field.slice(self.slice_index(s)), &p[..self.dims.len()]);
        if self.snap {
            self.bounds.snap(u)
        } else {
            self.bounds.clamp(u)
        }
    }
}

/// True when every stored value is P_min, 0 or P_max.
pub fn is_bang_bang(field: &Field, bounds: &ControlBounds) -> bool {
    let tol = 1e-12 * bounds.width();
    field.values().iter().all(|&u| {
        (u - bounds.p_min).abs() <= tol || (u - bounds.p_max).abs() <= tol || (bounds.admits_zero() && u.abs() <= tol)
    })
}

/// Simulated states (path, level, dim) and controls (path, step).
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub dim: usize,
    pub paths: usize,
    pub seed: u64,
    states: Vec<f64>,
    controls: Vec<f64>,
    /// Paths aborted on a non-finite state.
    pub failed: Vec<bool>,
}

impl PathBundle {
    pub fn state(&self, path: usize, m: usize) -> &[f64] {
        let off = (path * self.grid.len() + m) * self.dim;
        &self.states[off..off + self.dim]
    }

    pub fn control(&self, path: usize, m: usize) -> f64 {
        self.controls[path * self.grid.steps + m]
    }

    pub fn failed_count(&self) -> usize {
        self.failed.iter().filter(|f| **f).count()
    }

    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.paths).filter(|&p| !self.failed[p])
    }

    /// Sample mean and unbiased variance of one state component at level m.
    pub fn moments(&self, m: usize, axis: usize) -> (f64, f64) {
        let xs: Vec<f64> = self.live().map(|p| self.state(p, m)[axis]).collect();
        mean_var(&xs)
    }

    /// Sample mean of the control applied during step m.
    pub fn mean_control(&self, m: usize) -> f64 {
        let xs: Vec<f64> = self.live().map(|p| self.control(p, m)).collect();
        mean_var(&xs).0
    }

    /// Largest excursion of any live path outside [lo, hi] along `axis`.
    pub fn max_overshoot(&self, axis: usize, lo: f64, hi: f64) -> f64 {
        self.live()
            .flat_map(|p| (0..self.grid.len()).map(move |m| (p, m)))
            .map(|(p, m)| {
                let x = self.state(p, m)[axis];
                (lo - x).max(x - hi).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = par::pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, par::pairwise_sum(&sq) / (n - 1.0))
}

/// RNG of path `index` under `seed`: one ChaCha stream per path, so results
/// do not depend on scheduling or worker count.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// X_{m+1} = X_m + b(s_m, X_m, u_m)Δs + Σ(s_m, X_m)√Δs ξ_m, u_m = policy(s_m, X_m).
pub fn euler_maruyama<P: ControlProblem + ?Sized, Q: Policy + ?Sized>(
    problem: &P,
    policy: &Q,
    init: &InitialDistribution,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    let n = problem.dim();
    if init.dim() != n {
        return Err(Error::invalid("initial law and problem dimensions differ"));
    }
    if paths == 0 {
        return Err(Error::invalid("at least one path is required"));
    }
    let bounds = problem.control_bounds();
    let sqdt = grid.dt.sqrt();
    let per_path = par::map_range(paths, |p| {
        let mut rng = path_rng(seed, p as u64);
        let mut states = Vec::with_capacity(grid.len() * n);
        let mut controls = Vec::with_capacity(grid.steps);
        let mut x = [0.0; MAX_DIM];
        init.sample(&mut rng, &mut x[..n]);
        states.extend_from_slice(&x[..n]);
        let mut b = [0.0; MAX_DIM];
        let mut sig: Mat = [[0.0; MAX_DIM]; MAX_DIM];
        let mut failed = false;
        for m in 0..grid.steps {
            let s = grid.time(m);
            let u = if failed { 0.0 } else { bounds.clamp(policy.control(s, m, &x[..n])) };
            controls.push(u);
            if !failed {
                problem.drift(s, &x[..n], u, &mut b[..n]);
                problem.diffusion(s, &x[..n], &mut sig);
                let xi: [f64; MAX_DIM] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let mut next = [0.0; MAX_DIM];
                for i in 0..n {
                    let noise: f64 = (0..n).map(|j| sig[i][j] * xi[j]).sum();
                    next[i] = x[i] + b[i] * grid.dt + noise * sqdt;
                }
                if next[..n].iter().all(|v| v.is_finite()) {
                    x = next;
                } else {
                    failed = true;
                }
            }
            states.extend_from_slice(&x[..n]);
        }
        (states, controls, failed)
    });
    let mut states = Vec::with_capacity(paths * grid.len() * n);
    let mut controls = Vec::with_capacity(paths * grid.steps);
    let mut failed = Vec::with_capacity(paths);
    for (s, c, f) in per_path {
        states.extend(s);
        controls.extend(c);
        failed.push(f);
    }
    Ok(PathBundle { grid: *grid, dim: n, paths, seed, states, controls, failed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RevenueStats {
    pub mean: f64,
    pub std_error: f64,
    #[serde(skip)]
    pub values: Vec<f64>,
    pub failed_paths: usize,
}

impl RevenueStats {
    /// Two-sided normal confidence interval at `level`.
    pub fn interval(&self, level: f64) -> (f64, f64) {
        let z = normal_quantile(0.5 + 0.5 * level);
        (self.mean - z * self.std_error, self.mean + z * self.std_error)
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// Per-path trapezoidal ∫f ds + g(X_T); the control is constant on each step.
pub fn evaluate_revenue<P: ControlProblem + ?Sized>(bundle: &PathBundle, problem: &P) -> RevenueStats {
    let g = &bundle.grid;
    let live: Vec<usize> = bundle.live().collect();
    let values = par::map_range(live.len(), |k| {
        let p = live[k];
        let mut total = 0.0;
        for m in 0..g.steps {
            let u = bundle.control(p, m);
            let a = problem.running_cost(g.time(m), bundle.state(p, m), u);
            let b = problem.running_cost(g.time(m + 1), bundle.state(p, m + 1), u);
            total += 0.5 * g.dt * (a + b);
        }
        total + problem.terminal_cost(bundle.state(p, g.steps))
    });
    let (mean, var) = mean_var(&values);
    let std_error = if values.len() > 1 { (var / values.len() as f64).sqrt() } else { 0.0 };
    RevenueStats { mean, std_error, values, failed_paths: bundle.failed_count() }
}

/// u(s_m) = ∫ǔ(s_m, y)φ(s_m, y)dy for each policy step m.
pub fn expected_control(control: &Field, density: &Field) -> Result<Vec<f64>> {
    if control.mesh != density.mesh || control.grid != density.grid {
        return Err(Error::invalid("control and density live on different discretisations"));
    }
    let w = control.mesh.weights();
    Ok((0..control.grid.steps)
        .map(|m| control.slice(m).iter().zip(density.slice(m)).zip(w).map(|((u, p), w)| u * p * w).sum())
        .collect())
}

/// Hourly bids P̃(h): MW, piecewise constant over [h, h+1).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BidSchedule {
    pub start_hour: f64,
    pub values: Vec<f64>,
}

/// Hourly average of E[P_solar] + u, with both inputs constant on each step.
pub fn capacity_firming(u: &[f64], pv_expected: &[f64], grid: &TimeGrid) -> Result<BidSchedule> {
    if u.len() != grid.steps || pv_expected.len() != grid.steps {
        return Err(Error::invalid("bid inputs need one value per time step"));
    }
    let hours = grid.t_end - grid.t0;
    if (hours - hours.round()).abs() > 1e-9 || hours.round() < 1.0 {
        return Err(Error::invalid("capacity firming needs an integer number of hours"));
    }
    let mut values = vec![0.0; hours.round() as usize];
    for m in 0..grid.steps {
        let (a, b) = (grid.time(m) - grid.t0, grid.time(m + 1) - grid.t0);
        let p = u[m] + pv_expected[m];
        for (h, v) in values.iter_mut().enumerate() {
            let overlap = (b.min(h as f64 + 1.0) - a.max(h as f64)).max(0.0);
            *v += overlap * p;
        }
    }
    Ok(BidSchedule { start_hour: grid.t0, values })
}

/// E[I_s] = I_CS(s)·E[Z_s].
pub fn expected_irradiance(clear_sky: f64, mean_z: f64) -> f64 {
    clear_sky * mean_z
}

/// One row per time level: (s, E[I_s], I_CS(s), I(s) = I_CS(s)·θ_Z(s)).
pub fn irradiance_table(problem: &PvProblem, grid: &TimeGrid, mean_z: &[f64]) -> Vec<[f64; 4]> {
    (0..grid.len())
        .map(|m| {
            let s = grid.time(m);
            let ics = problem.clear_sky(s);
            [s, expected_irradiance(ics, mean_z[m]), ics, ics * problem.sde.theta_z.value(s)]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TensorMesh;
    use crate::model::BoxSet;
    use std::sync::Arc;

    /// dX = (c + u) ds + σ dB in 1-D with f = X, g = 0.
    struct Line {
        c: f64,
        sigma: f64,
        set: BoxSet,
    }

    impl ControlProblem for Line {
        fn dim(&self) -> usize {
            1
        }
        fn horizon(&self) -> (f64, f64) {
            (0.0, 1.0)
        }
        fn drift(&self, _s: f64, _y: &[f64], u: f64, out: &mut [f64]) {
            out[0] = self.c + u;
        }
        fn diffusion(&self, _s: f64, _y: &[f64], out: &mut Mat) {
            *out = [[0.0; MAX_DIM]; MAX_DIM];
            out[0][0] = self.sigma;
        }
        fn running_cost(&self, _s: f64, y: &[f64], _u: f64) -> f64 {
            y[0]
        }
        fn terminal_cost(&self, _y: &[f64]) -> f64 {
            0.0
        }
        fn control_bounds(&self) -> ControlBounds {
            ControlBounds::default()
        }
        fn constraint(&self) -> &BoxSet {
            &self.set
        }
    }

    /// OU: dX = κ(θ − X)ds + σ dB.
    struct Ou;

    impl ControlProblem for Ou {
        fn dim(&self) -> usize {
            1
        }
        fn horizon(&self) -> (f64, f64) {
            (0.0, 4.0)
        }
        fn drift(&self, _s: f64, y: &[f64], _u: f64, out: &mut [f64]) {
            out[0] = 0.75 * (0.5 - y[0]);
        }
        fn diffusion(&self, _s: f64, _y: &[f64], out: &mut Mat) {
            *out = [[0.0; MAX_DIM]; MAX_DIM];
            out[0][0] = 0.2;
        }
        fn running_cost(&self, _s: f64, _y: &[f64], _u: f64) -> f64 {
            0.0
        }
        fn terminal_cost(&self, _y: &[f64]) -> f64 {
            0.0
        }
        fn control_bounds(&self) -> ControlBounds {
            ControlBounds::default()
        }
        fn constraint(&self) -> &BoxSet {
            static SET: std::sync::OnceLock<BoxSet> = std::sync::OnceLock::new();
            SET.get_or_init(|| BoxSet::unbounded(1))
        }
    }

    fn point_init(x: f64) -> InitialDistribution {
        InitialDistribution::new(vec![x], vec![1e-300]).unwrap()
    }

    #[test]
    fn deterministic_line() {
        let p = Line { c: 1.5, sigma: 0.0, set: BoxSet::unbounded(1) };
        let grid = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let b = euler_maruyama(&p, &|_s: f64, _x: &[f64]| 0.0, &point_init(2.0), &grid, 3, 7).unwrap();
        for m in 0..grid.len() {
            assert!((b.state(1, m)[0] - (2.0 + 1.5 * grid.time(m))).abs() < 1e-12);
        }
        // ∫₀¹ (2 + 1.5 s) ds = 2.75, exact under the trapezoid rule.
        let r = evaluate_revenue(&b, &p);
        assert!((r.mean - 2.75).abs() < 1e-12);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn ou_sample_mean_matches_analytic_mean() {
        let grid = TimeGrid::new(0.0, 4.0, 0.01).unwrap();
        let b = euler_maruyama(&Ou, &|_s: f64, _x: &[f64]| 0.0, &point_init(2.0), &grid, 10_000, 11).unwrap();
        let (mean, var) = b.moments(grid.steps, 0);
        let exact = 0.5 + 1.5 * (-0.75f64 * 4.0).exp();
        let se = (var / 10_000.0).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "mean {mean} vs {exact} (se {se})");
    }

    #[test]
    fn battery_discharge_mean_is_linear() {
        let pv = PvProblem::default_scenario();
        let init = InitialDistribution::pv_default(&pv);
        let grid = TimeGrid::new(0.0, 2.0, 0.5).unwrap();
        let b = euler_maruyama(&pv, &|_s: f64, _x: &[f64]| 1.0, &init, &grid, 4000, 3).unwrap();
        for m in 0..grid.len() {
            let (mean, var) = b.moments(m, 2);
            let se = (var / 4000.0).sqrt().max(1e-12);
            assert!((mean - (2.0 - grid.time(m))).abs() < 4.0 * se + 1e-9, "level {m}: {mean}");
        }
    }

    #[test]
    fn bundles_are_reproducible_and_worker_invariant() {
        let pv = PvProblem::default_scenario();
        let init = InitialDistribution::pv_default(&pv);
        let grid = TimeGrid::new(0.0, 24.0, 0.5).unwrap();
        let pol = |s: f64, x: &[f64]| if x[1] > 70.0 && s > 1.0 { 1.0 } else { -1.0 };
        let a = euler_maruyama(&pv, &pol, &init, &grid, 64, 5).unwrap();
        par::set_execution(par::Execution::Sequential);
        let b = euler_maruyama(&pv, &pol, &init, &grid, 64, 5).unwrap();
        par::set_execution(par::Execution::Parallel);
        assert_eq!(a, b);
        let c = euler_maruyama(&pv, &pol, &init, &grid, 64, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_price_gives_zero_running_revenue() {
        let mut pv = PvProblem::default_scenario();
        pv.terminal_price = 0.0;
        let init = InitialDistribution::new(vec![0.5, 0.0, 2.0], vec![0.01, 1e-300, 0.01]).unwrap();
        pv.sde.sigma_pp = 0.0;
        pv.sde.theta_pi = crate::curve::TimeCurve::Constant(0.0);
        let grid = TimeGrid::new(0.0, 24.0, 0.5).unwrap();
        let b = euler_maruyama(&pv, &|_s: f64, _x: &[f64]| -1.0, &init, &grid, 50, 1).unwrap();
        // The price starts at 0 up to a 1e-150 spread and has no drift or noise.
        let r = evaluate_revenue(&b, &pv);
        assert!(r.mean.abs() < 1e-100, "{}", r.mean);
    }

    #[test]
    fn standard_error_halves_with_four_times_the_paths() {
        let p = Line { c: 0.0, sigma: 1.0, set: BoxSet::unbounded(1) };
        let grid = TimeGrid::new(0.0, 1.0, 0.05).unwrap();
        let pol = |_s: f64, _x: &[f64]| 0.0;
        let a = evaluate_revenue(&euler_maruyama(&p, &pol, &point_init(0.0), &grid, 2000, 9).unwrap(), &p);
        let b = evaluate_revenue(&euler_maruyama(&p, &pol, &point_init(0.0), &grid, 4000, 9).unwrap(), &p);
        let ratio = a.std_error / b.std_error;
        assert!((ratio / std::f64::consts::SQRT_2 - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    fn fields(u: [f64; 4]) -> (Field, Field) {
        // Four nodes on [0, 3]: trapezoid weights (0.5, 1, 1, 0.5), so φ ≡ 1/3 has unit mass.
        let mesh = Arc::new(TensorMesh::new(&[(0.0, 3.0)], &[4]).unwrap());
        let grid = TimeGrid::new(0.0, 1.0, 0.5).unwrap();
        let uu: Vec<f64> = (0..grid.len()).flat_map(|_| u).collect();
        let pp = vec![1.0 / 3.0; 4 * grid.len()];
        (
            Field::from_values(mesh.clone(), grid, "MW", uu).unwrap(),
            Field::from_values(mesh, grid, "1", pp).unwrap(),
        )
    }

    #[test]
    fn expected_control_examples() {
        let (u, p) = fields([0.3; 4]);
        assert!(expected_control(&u, &p).unwrap().iter().all(|v| (v - 0.3).abs() < 1e-12));
        let (u, p) = fields([1.0, 1.0, -1.0, -1.0]);
        assert!(expected_control(&u, &p).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn capacity_firming_examples() {
        let grid = TimeGrid::new(0.0, 2.0, 0.5).unwrap();
        let b = capacity_firming(&[0.2; 4], &[0.3; 4], &grid).unwrap();
        assert_eq!(b.values, vec![0.5, 0.5]);
        let b = capacity_firming(&[1.0, 0.0, -1.0, -1.0], &[0.0; 4], &grid).unwrap();
        assert_eq!(b.values, vec![0.5, -1.0]);
        let odd = TimeGrid::new(0.0, 1.5, 0.5).unwrap();
        assert!(capacity_firming(&[0.0; 3], &[0.0; 3], &odd).is_err());
    }

    #[test]
    fn bids_conserve_the_time_average() {
        let grid = TimeGrid::new(0.0, 24.0, 0.5).unwrap();
        let u: Vec<f64> = (0..grid.steps).map(|m| ((m as f64) * 0.7).sin()).collect();
        let pv: Vec<f64> = (0..grid.steps).map(|m| (m as f64 * 0.1).cos().abs()).collect();
        let b = capacity_firming(&u, &pv, &grid).unwrap();
        let lhs = b.values.iter().sum::<f64>() / 24.0;
        let rhs = u.iter().zip(&pv).map(|(a, b)| a + b).sum::<f64>() / grid.steps as f64;
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn irradiance_examples() {
        assert_eq!(expected_irradiance(0.0, 0.7), 0.0);
        assert!((expected_irradiance(1000.0, 0.7) - 700.0).abs() < 1e-12);
    }

    #[test]
    fn field_policy_snaps_bang_bang_values() {
        let mesh = Arc::new(TensorMesh::new(&[(0.0, 4.0)], &[5]).unwrap());
        let grid = TimeGrid::new(0.0, 1.0, 0.5).unwrap();
        let vals: Vec<f64> = (0..grid.len()).flat_map(|_| [-1.0, -1.0, 1.0, 1.0, 1.0]).collect();
        let f = Field::from_values(mesh, grid, "MW", vals).unwrap();
        let pol = FieldPolicy::new(&f, vec![2], ControlBounds::default()).unwrap();
        assert!(pol.snap);
        assert_eq!(pol.control(0.2, 0, &[0.0, 0.0, 1.1]), -1.0);
        assert_eq!(pol.control(0.2, 0, &[0.0, 0.0, 1.5]), 0.0);
        assert_eq!(pol.control(0.2, 0, &[0.0, 0.0, 1.9]), 1.0);
        assert_eq!(pol.control(0.7, 1, &[0.0, 0.0, 99.0]), 1.0);
    }
}
