//! Control-problem interface and its two concrete instances: the PV plant
//! with battery storage, and the linear-quadratic validation fixture.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erf;

use crate::curve::{Synthetic, TimeCurve};
use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;
pub type Mat = [[f64; MAX_DIM]; MAX_DIM];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlBounds {
    pub p_min: f64,
    pub p_max: f64,
}

impl ControlBounds {
    pub fn new(p_min: f64, p_max: f64) -> Result<Self> {
        if !(p_min.is_finite() && p_max.is_finite() && p_min < p_max) {
            return Err(Error::invalid(format!("control bounds need p_min < p_max, got [{p_min}, {p_max}]")));
        }
        Ok(Self { p_min, p_max })
    }

    pub fn width(&self) -> f64 {
        self.p_max - self.p_min
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.p_min, self.p_max)
    }

    pub fn admits_zero(&self) -> bool {
        self.p_min <= 0.0 && 0.0 <= self.p_max
    }

    /// Nearest of {P_min, 0, P_max} (zero only when admissible).
    pub fn snap(&self, u: f64) -> f64 {
        let mut best = self.p_min;
        for c in [0.0, self.p_max] {
            if (c != 0.0 || self.admits_zero()) && (u - c).abs() < (u - best).abs() {
                best = c;
            }
        }
        best
    }
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self { p_min: -1.0, p_max: 1.0 }
    }
}

/// Axis-aligned box, each bound possibly infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid("box bounds must have equal length"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::invalid(format!("box component {i}: lower {l} exceeds upper {u}")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|l| *l == f64::NEG_INFINITY) && self.upper.iter().all(|u| *u == f64::INFINITY)
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, u))| v.max(*l).min(*u)).collect()
    }

    /// Euclidean distance from `y` to the box.
    pub fn distance(&self, y: &[f64]) -> f64 {
        let p = self.project(y);
        y.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn restrict(&self, dims: &[usize]) -> Self {
        Self {
            lower: dims.iter().map(|&d| self.lower[d]).collect(),
            upper: dims.iter().map(|&d| self.upper[d]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl Sense {
    /// +1 for maximisation, −1 for minimisation.
    pub fn sign(self) -> f64 {
        match self {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        }
    }
}

/// Continuous-time controlled diffusion dX = b(s,X,u)ds + Σ(s,X)dB with
/// running cost f and terminal cost g, scalar control in a box.
///
/// The diffusion tensor is square (one Brownian channel per state).
pub trait ControlProblem: Send + Sync {
    fn dim(&self) -> usize;
    fn horizon(&self) -> (f64, f64);
    fn drift(&self, s: f64, y: &[f64], u: f64, out: &mut [f64]);
    fn diffusion(&self, s: f64, y: &[f64], out: &mut Mat);
    fn running_cost(&self, s: f64, y: &[f64], u: f64) -> f64;
    fn terminal_cost(&self, y: &[f64]) -> f64;
    fn control_bounds(&self) -> ControlBounds;
    fn constraint(&self) -> &BoxSet;

    fn sense(&self) -> Sense {
        Sense::Maximize
    }

    /// Whether b·p + f is affine in u, which makes the maximiser bang-bang.
    fn affine_in_control(&self) -> bool {
        false
    }

    /// Closed-form optimiser of the native Hamiltonian given the native value
    /// gradient, when one is known.
    fn closed_form_control(&self, _s: f64, _y: &[f64], _grad: &[f64]) -> Option<f64> {
        None
    }
}

/// Three-point collinearity test of u ↦ b(s,y,u)·p + f(s,y,u) at each probe.
pub fn is_affine_in_control<P: ControlProblem + ?Sized>(problem: &P, probes: &[(f64, Vec<f64>, Vec<f64>)]) -> bool {
    let bounds = problem.control_bounds();
    let n = problem.dim();
    let mut b = [0.0; MAX_DIM];
    let mut h = |s: f64, y: &[f64], p: &[f64], u: f64| {
        problem.drift(s, y, u, &mut b[..n]);
        b[..n].iter().zip(p).map(|(x, q)| x * q).sum::<f64>() + problem.running_cost(s, y, u)
    };
    probes.iter().all(|(s, y, p)| {
        let h0 = h(*s, y, p, bounds.p_min);
        let h1 = h(*s, y, p, bounds.p_max);
        let hm = h(*s, y, p, 0.5 * (bounds.p_min + bounds.p_max));
        (hm - 0.5 * (h0 + h1)).abs() <= 1e-10 * (1.0 + h0.abs() + h1.abs())
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolarGeometry {
    pub day_of_year: u32,
    pub zenith: TimeCurve,
    /// `None` means γ(s) = π/2 − α_z(s).
    pub inclination: Option<TimeCurve>,
    pub tilt: f64,
}

impl SolarGeometry {
    pub fn validate(&self, horizon: (f64, f64)) -> Result<()> {
        if !(1..=366).contains(&self.day_of_year) {
            return Err(Error::invalid(format!("day of year {} outside [1, 366]", self.day_of_year)));
        }
        if !(0.0..=PI / 2.0).contains(&self.tilt) {
            return Err(Error::invalid(format!("tilt {} outside [0, π/2]", self.tilt)));
        }
        let (t0, t1) = horizon;
        for k in 0..=200 {
            let s = t0 + (t1 - t0) * k as f64 / 200.0;
            let a = self.zenith.value(s);
            if !(0.0..=PI).contains(&a) {
                return Err(Error::invalid(format!("zenith angle {a} at s = {s} outside [0, π]")));
            }
        }
        Ok(())
    }

    pub fn zenith_at(&self, s: f64) -> f64 {
        self.zenith.value(s)
    }

    pub fn inclination_at(&self, s: f64) -> f64 {
        match &self.inclination {
            Some(c) => c.value(s),
            None => PI / 2.0 - self.zenith.value(s),
        }
    }
}

impl Default for SolarGeometry {
    fn default() -> Self {
        Self {
            day_of_year: 15,
            zenith: TimeCurve::Synthetic(Synthetic::Zenith),
            inclination: None,
            tilt: 0.2382 * PI,
        }
    }
}

/// Clear-sky irradiance (W/m²); zero when the sun is below the horizon.
pub fn clear_sky_irradiance(s: f64, geom: &SolarGeometry) -> f64 {
    let c = geom.zenith_at(s).cos();
    // cos(π/2) evaluates to ~6e-17; treat the horizon itself as night.
    if c <= 1e-12 {
        return 0.0;
    }
    let seasonal = 83.69 * (2.0 * PI * (geom.day_of_year as f64 + 82.07) / 365.24).sin() + 1130.44;
    c.powf(1.2) * seasonal
}

#[derive(Clone, Debug, PartialEq)]
pub struct PvParams {
    pub area: f64,
    pub efficiency: f64,
    pub geometry: SolarGeometry,
}

impl PvParams {
    pub fn validate(&self, horizon: (f64, f64)) -> Result<()> {
        if !(self.area > 0.0) {
            return Err(Error::invalid("PV area must be positive"));
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::invalid("PV efficiency must lie in (0, 1]"));
        }
        self.geometry.validate(horizon)
    }
}

impl Default for PvParams {
    fn default() -> Self {
        Self { area: 7500.0, efficiency: 0.8, geometry: SolarGeometry::default() }
    }
}

/// PV output (MW) for irradiance `i` (W/m²); zero when sin γ ≤ 0.
pub fn pv_power(i: f64, params: &PvParams, s: f64) -> f64 {
    let gamma = params.geometry.inclination_at(s);
    let sg = gamma.sin();
    if sg <= 0.0 {
        return 0.0;
    }
    1e-6 * params.area * params.efficiency * i * (gamma + params.geometry.tilt).sin() / sg
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdeParams {
    pub kappa_z: f64,
    pub kappa_pi: f64,
    pub sigma_zz: f64,
    pub sigma_pz: f64,
    pub sigma_pp: f64,
    pub sigma_ee: f64,
    pub theta_z: TimeCurve,
    pub theta_pi: TimeCurve,
}

impl SdeParams {
    pub fn validate(&self, horizon: (f64, f64)) -> Result<()> {
        if !(self.kappa_z > 0.0 && self.kappa_pi > 0.0) {
            return Err(Error::invalid("mean-reversion rates must be positive"));
        }
        for (name, v) in [
            ("sigma_zz", self.sigma_zz),
            ("sigma_pz", self.sigma_pz),
            ("sigma_pp", self.sigma_pp),
            ("sigma_ee", self.sigma_ee),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite nonnegative number")));
            }
        }
        let (t0, t1) = horizon;
        for k in 0..=200 {
            let s = t0 + (t1 - t0) * k as f64 / 200.0;
            let z = self.theta_z.value(s);
            if !(0.0..=1.0).contains(&z) {
                return Err(Error::invalid(format!("theta_z({s}) = {z} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

impl Default for SdeParams {
    fn default() -> Self {
        Self {
            kappa_z: 0.75,
            kappa_pi: 0.04,
            sigma_zz: 0.2,
            sigma_pz: 0.0,
            sigma_pp: 0.075,
            sigma_ee: 0.1,
            theta_z: TimeCurve::Synthetic(Synthetic::ClearSkyIndex),
            theta_pi: TimeCurve::Synthetic(Synthetic::Price),
        }
    }
}

pub fn pv_drift(s: f64, y: &[f64], u: f64, p: &SdeParams, out: &mut [f64]) {
    out[0] = p.kappa_z * (p.theta_z.value(s) - y[0]);
    out[1] = p.kappa_pi * (p.theta_pi.value(s) + p.theta_pi.derivative(s) / p.kappa_pi - y[1]);
    out[2] = -u;
}

pub fn pv_diffusion(y: &[f64], p: &SdeParams, out: &mut Mat) {
    *out = [[0.0; MAX_DIM]; MAX_DIM];
    out[0][0] = p.sigma_zz * y[0] * (1.0 - y[0]);
    out[1][0] = p.sigma_pz * y[1];
    out[1][1] = p.sigma_pp * y[1];
    out[2][2] = p.sigma_ee * y[2];
}

/// State (Z, Π, ℰ): clear-sky index, spot price (€/MWh), stored energy (MWh).
/// Control: battery power (MW), positive when discharging.
#[derive(Clone, Debug)]
pub struct PvProblem {
    pub sde: SdeParams,
    pub pv: PvParams,
    pub bounds: ControlBounds,
    pub constraint: BoxSet,
    pub terminal_price: f64,
    pub horizon: (f64, f64),
}

impl PvProblem {
    pub fn new(
        sde: SdeParams,
        pv: PvParams,
        bounds: ControlBounds,
        energy_bounds: (f64, f64),
        terminal_price: Option<f64>,
        horizon: (f64, f64),
    ) -> Result<Self> {
        if !(horizon.0 < horizon.1) {
            return Err(Error::invalid("horizon must satisfy t < T"));
        }
        sde.validate(horizon)?;
        pv.validate(horizon)?;
        let constraint = BoxSet::new(
            vec![f64::NEG_INFINITY, f64::NEG_INFINITY, energy_bounds.0],
            vec![f64::INFINITY, f64::INFINITY, energy_bounds.1],
        )?;
        let terminal_price = terminal_price.unwrap_or_else(|| sde.theta_pi.value(horizon.1));
        let problem = Self { sde, pv, bounds, constraint, terminal_price, horizon };
        let probes: Vec<_> = [(horizon.0, 0.3, 60.0, 2.0), (0.5 * (horizon.0 + horizon.1), 0.8, 90.0, 1.0)]
            .iter()
            .map(|&(s, z, pi, e)| (s, vec![z, pi, e], vec![0.7, -1.3, 55.0]))
            .collect();
        if !is_affine_in_control(&problem, &probes) {
            return Err(Error::invalid("PV Hamiltonian failed the affinity check"));
        }
        Ok(problem)
    }

    pub fn default_scenario() -> Self {
        Self::new(
            SdeParams::default(),
            PvParams::default(),
            ControlBounds::default(),
            (0.0, 4.0),
            None,
            (0.0, 24.0),
        )
        .expect("default scenario is valid")
    }

    pub fn energy_bounds(&self) -> (f64, f64) {
        (self.constraint.lower[2], self.constraint.upper[2])
    }

    pub fn clear_sky(&self, s: f64) -> f64 {
        clear_sky_irradiance(s, &self.pv.geometry)
    }

    /// Expected PV output given E[Z_s] (the output is linear in Z).
    pub fn solar_power(&self, s: f64, z: f64) -> f64 {
        pv_power(self.clear_sky(s) * z, &self.pv, s)
    }
}

impl ControlProblem for PvProblem {
    fn dim(&self) -> usize {
        3
    }

    fn horizon(&self) -> (f64, f64) {
        self.horizon
    }

    fn drift(&self, s: f64, y: &[f64], u: f64, out: &mut [f64]) {
        pv_drift(s, y, u, &self.sde, out)
    }

    fn diffusion(&self, _s: f64, y: &[f64], out: &mut Mat) {
        pv_diffusion(y, &self.sde, out)
    }

    fn running_cost(&self, s: f64, y: &[f64], u: f64) -> f64 {
        y[1] * (self.solar_power(s, y[0]) + u)
    }

    fn terminal_cost(&self, y: &[f64]) -> f64 {
        self.terminal_price * y[2]
    }

    fn control_bounds(&self) -> ControlBounds {
        self.bounds
    }

    fn constraint(&self) -> &BoxSet {
        &self.constraint
    }

    fn affine_in_control(&self) -> bool {
        true
    }
}

/// dX = u ds + σ dB, minimise E[∫(u² + X²)ds + X_T²]. Value y² + σ²(T−s).
#[derive(Clone, Debug)]
pub struct LqProblem {
    pub sigma: f64,
    pub horizon: (f64, f64),
    pub bounds: ControlBounds,
    pub constraint: BoxSet,
}

impl LqProblem {
    pub fn new(sigma: f64, horizon: (f64, f64)) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("LQ noise must be positive"));
        }
        Ok(Self { sigma, horizon, bounds: ControlBounds::new(-50.0, 50.0)?, constraint: BoxSet::unbounded(1) })
    }

    pub fn with_constraint(mut self, lower: f64, upper: f64) -> Result<Self> {
        self.constraint = BoxSet::new(vec![lower], vec![upper])?;
        Ok(self)
    }

    pub fn exact_value(&self, s: f64, y: f64) -> f64 {
        y * y + self.sigma * self.sigma * (self.horizon.1 - s)
    }
}

impl ControlProblem for LqProblem {
    fn dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> (f64, f64) {
        self.horizon
    }

    fn drift(&self, _s: f64, _y: &[f64], u: f64, out: &mut [f64]) {
        out[0] = u;
    }

    fn diffusion(&self, _s: f64, _y: &[f64], out: &mut Mat) {
        *out = [[0.0; MAX_DIM]; MAX_DIM];
        out[0][0] = self.sigma;
    }

    fn running_cost(&self, _s: f64, y: &[f64], u: f64) -> f64 {
        u * u + y[0] * y[0]
    }

    fn terminal_cost(&self, y: &[f64]) -> f64 {
        y[0] * y[0]
    }

    fn control_bounds(&self) -> ControlBounds {
        self.bounds
    }

    fn constraint(&self) -> &BoxSet {
        &self.constraint
    }

    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    fn closed_form_control(&self, _s: f64, _y: &[f64], grad: &[f64]) -> Option<f64> {
        Some(self.bounds.clamp(-0.5 * grad[0]))
    }
}

/// Normal initial law with diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialDistribution {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl InitialDistribution {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() || mean.is_empty() {
            return Err(Error::invalid("initial mean and variance must have equal, nonzero length"));
        }
        if variance.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("initial variances must be positive"));
        }
        Ok(Self { mean, variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn density(&self, y: &[f64]) -> f64 {
        let mut log = 0.0;
        for ((x, m), v) in y.iter().zip(&self.mean).zip(&self.variance) {
            log += -0.5 * (x - m) * (x - m) / v - 0.5 * (2.0 * PI * v).ln();
        }
        log.exp()
    }

    /// Mass of the normal law inside the box.
    pub fn mass_inside(&self, lower: &[f64], upper: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.variance)
            .zip(lower.iter().zip(upper))
            .map(|((m, v), (a, b))| {
                let sd = v.sqrt() * std::f64::consts::SQRT_2;
                0.5 * (erf((b - m) / sd) - erf((a - m) / sd))
            })
            .product()
    }

    pub fn marginal(&self, dims: &[usize]) -> Self {
        Self {
            mean: dims.iter().map(|&d| self.mean[d]).collect(),
            variance: dims.iter().map(|&d| self.variance[d]).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for ((o, m), v) in out.iter_mut().zip(&self.mean).zip(&self.variance) {
            let z: f64 = rng.sample(StandardNormal);
            *o = m + v.sqrt() * z;
        }
    }

    /// Default PV initial law: mean (θ_Z(t), θ_Π(t), 2), variances (0.1, 8.56, 0.01).
    pub fn pv_default(problem: &PvProblem) -> Self {
        let t = problem.horizon.0;
        Self {
            mean: vec![problem.sde.theta_z.value(t), problem.sde.theta_pi.value(t), 2.0],
            variance: vec![0.1, 8.560, 0.01],
        }
    }
}
