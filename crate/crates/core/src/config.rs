//! Scenario configuration: a TOML file with one table per concern. Every
//! omitted key falls back to the default PV scenario.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alm::AlmParams;
use crate::benchmarks::{MpcParams, ThresholdParams, TouSchedule};
use crate::curve::{CubicSpline, Synthetic, TimeCurve};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::io::sha256_hex;
use crate::model::{ControlBounds, InitialDistribution, PvParams, PvProblem, SdeParams, SolarGeometry};
use crate::reduction::{AxisSpec, Partition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full3d,
    Energy1d,
    PriceEnergy2d,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Full3d => "full3d",
            Mode::Energy1d => "energy1d",
            Mode::PriceEnergy2d => "price_energy2d",
        }
    }

    /// State partition for the reduced modes; `None` for the full model.
    pub fn partition(self) -> Option<Partition> {
        let p = match self {
            Mode::Full3d => return None,
            Mode::Energy1d => Partition::new(3, vec![2], vec![vec![0], vec![1]]),
            Mode::PriceEnergy2d => Partition::new(3, vec![1, 2], vec![vec![0]]),
        };
        Some(p.expect("PV partitions are well formed"))
    }

    /// Full-state coordinates the policy of this mode reads.
    pub fn controlled(self) -> Vec<usize> {
        self.partition().map_or(vec![0, 1, 2], |p| p.controlled)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full3d" => Ok(Mode::Full3d),
            "energy1d" => Ok(Mode::Energy1d),
            "price_energy2d" => Ok(Mode::PriceEnergy2d),
            _ => Err(Error::config("mode", format!("unknown mode {s:?}; expected full3d, energy1d or price_energy2d"))),
        }
    }
}

/// A θ curve or solar angle: `"synthetic"`, a constant, or `{ csv = "path" }`
/// with (hour, value) rows. Relative paths resolve against the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveSpec {
    Constant(f64),
    Named(String),
    Csv { csv: PathBuf },
}

impl CurveSpec {
    fn synthetic() -> Self {
        CurveSpec::Named("synthetic".into())
    }

    fn build(&self, field: &str, synthetic: Synthetic, base: &Path) -> Result<TimeCurve> {
        match self {
            CurveSpec::Constant(v) if v.is_finite() => Ok(TimeCurve::Constant(*v)),
            CurveSpec::Constant(v) => Err(Error::config(field, format!("constant {v} is not finite"))),
            CurveSpec::Named(n) if n == "synthetic" => Ok(TimeCurve::Synthetic(synthetic)),
            CurveSpec::Named(n) => {
                Err(Error::config(field, format!("unknown curve {n:?}; use \"synthetic\", a number or {{ csv = \"path\" }}")))
            }
            CurveSpec::Csv { csv } => Ok(TimeCurve::Spline(CubicSpline::from_csv(&base.join(csv))?)),
        }
    }

    fn csv_path(&self, base: &Path) -> Option<PathBuf> {
        match self {
            CurveSpec::Csv { csv } => Some(base.join(csv)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeSection {
    pub kappa_z: f64,
    pub kappa_pi: f64,
    pub sigma_zz: f64,
    pub sigma_pz: f64,
    pub sigma_pp: f64,
    pub sigma_ee: f64,
    pub theta_z: CurveSpec,
    pub theta_pi: CurveSpec,
}

impl Default for SdeSection {
    fn default() -> Self {
        let d = SdeParams::default();
        Self {
            kappa_z: d.kappa_z,
            kappa_pi: d.kappa_pi,
            sigma_zz: d.sigma_zz,
            sigma_pz: d.sigma_pz,
            sigma_pp: d.sigma_pp,
            sigma_ee: d.sigma_ee,
            theta_z: CurveSpec::synthetic(),
            theta_pi: CurveSpec::synthetic(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PvSection {
    /// m²
    pub area: f64,
    pub efficiency: f64,
    pub day_of_year: u32,
    /// Panel tilt β (rad).
    pub tilt: f64,
    /// Solar zenith angle α_z(s) (rad).
    pub zenith: CurveSpec,
    /// Inclination γ(s) (rad); omitted means π/2 − α_z(s).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inclination: Option<CurveSpec>,
}

impl Default for PvSection {
    fn default() -> Self {
        let d = PvParams::default();
        Self {
            area: d.area,
            efficiency: d.efficiency,
            day_of_year: d.geometry.day_of_year,
            tilt: d.geometry.tilt,
            zenith: CurveSpec::synthetic(),
            inclination: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    /// MW, negative when charging.
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        let d = ControlBounds::default();
        Self { p_min: d.p_min, p_max: d.p_max }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintSection {
    /// MWh
    pub energy_min: f64,
    pub energy_max: f64,
    /// c_T (€/MWh); omitted means θ_Π(T).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_price: Option<f64>,
}

impl Default for ConstraintSection {
    fn default() -> Self {
        Self { energy_min: 0.0, energy_max: 4.0, terminal_price: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    /// (Z, Π, ℰ); omitted means (θ_Z(t), θ_Π(t), 2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<[f64; 3]>,
    pub variance: [f64; 3],
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { mean: None, variance: [0.1, 8.56, 0.01] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonSection {
    /// Hours.
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl Default for HorizonSection {
    fn default() -> Self {
        Self { t0: 0.0, t_end: 24.0, dt: 0.5 }
    }
}

/// Axes as `[lower, upper, nodes]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshSection {
    pub z: AxisSpec,
    pub price: AxisSpec,
    pub energy: AxisSpec,
    /// Node counts of the coarse (Z, Π, ℰ) mesh used in full3d mode.
    pub full3d: [usize; 3],
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { z: (-5.0, 5.0, 21), price: (-40.0, 220.0, 66), energy: (-30.0, 40.0, 71), full3d: [11, 34, 36] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionSection {
    pub mode: Mode,
}

impl Default for ReductionSection {
    fn default() -> Self {
        Self { mode: Mode::Energy1d }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSection {
    /// Monte Carlo paths R.
    pub paths: usize,
    pub seed: u64,
    /// Initial penalties of the λ⁰ sweep.
    pub sweep_lambda0: Vec<f64>,
    pub threshold: ThresholdParams,
    pub tou: TouSchedule,
    pub mpc: MpcParams,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            paths: 10_000,
            seed: 2024,
            sweep_lambda0: vec![1000.0, 100.0, 50.0, 20.0, 8.0, 6.0],
            threshold: ThresholdParams::default(),
            tou: TouSchedule::default(),
            mpc: MpcParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default") }
    }
}

/// Optional declaration of the units the file is written in. Only the
/// canonical units are accepted; the table exists so that a file written
/// for other units fails loudly instead of being misread.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnitsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub price: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angle: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub area: Option<String>,
}

impl UnitsSection {
    fn check(&self) -> Result<()> {
        let table: [(&str, &Option<String>, &[&str]); 6] = [
            ("units.time", &self.time, &["h", "hour", "hours"]),
            ("units.price", &self.price, &["EUR/MWh", "€/MWh"]),
            ("units.energy", &self.energy, &["MWh"]),
            ("units.power", &self.power, &["MW"]),
            ("units.angle", &self.angle, &["rad"]),
            ("units.area", &self.area, &["m2", "m^2", "m²"]),
        ];
        for (field, given, accepted) in table {
            if let Some(u) = given {
                if !accepted.contains(&u.as_str()) {
                    return Err(Error::config(field, format!("unsupported unit {u:?}; expected {}", accepted[0])));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub sde: SdeSection,
    pub pv: PvSection,
    pub bounds: BoundsSection,
    pub constraints: ConstraintSection,
    pub initial: InitialSection,
    pub horizon: HorizonSection,
    pub mesh: MeshSection,
    pub alm: AlmParams,
    pub reduction: ReductionSection,
    pub benchmark: BenchmarkSection,
    pub output: OutputSection,
    pub units: UnitsSection,
    /// Directory that relative CSV paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Re-labels a model-level validation message with the offending section.
fn in_section(section: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Invalid(msg) => Error::config(section, msg),
        other => other,
    }
}

fn scaled(n: usize, factor: f64) -> usize {
    (((n - 1) as f64 * factor).round() as usize + 1).max(3)
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::File { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base).map_err(|e| match e {
            Error::Config { field, message } if field == "toml" => {
                Error::File { path: path.to_path_buf(), message }
            }
            other => other,
        })
    }

    /// Parses and validates; syntax errors carry line and column.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::config("toml", e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("toml", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.units.check()?;
        let h = &self.horizon;
        if !(h.t0.is_finite() && h.t_end.is_finite() && h.t0 < h.t_end) {
            return Err(Error::config("horizon", format!("need t0 < t_end, got [{}, {}]", h.t0, h.t_end)));
        }
        self.time_grid()?;
        let c = &self.constraints;
        if !(c.energy_min < c.energy_max) {
            return Err(Error::config(
                "constraints",
                format!("energy_min {} must be below energy_max {}", c.energy_min, c.energy_max),
            ));
        }
        for (name, axis) in [("mesh.z", self.mesh.z), ("mesh.price", self.mesh.price), ("mesh.energy", self.mesh.energy)] {
            check_axis(name, axis)?;
        }
        if self.mesh.full3d.iter().any(|&n| n < 3) {
            return Err(Error::config("mesh.full3d", format!("node counts {:?} must all be at least 3", self.mesh.full3d)));
        }
        let problem = self.problem()?;
        self.initial(&problem)?;
        self.alm.validate()?;
        let b = &self.benchmark;
        if b.paths < 2 {
            return Err(Error::config("benchmark.paths", "need at least 2 Monte Carlo paths"));
        }
        b.threshold.validate()?;
        b.tou.validate()?;
        b.mpc.validate()?;
        if b.sweep_lambda0.iter().any(|l| !(*l >= self.alm.lambda_min)) {
            return Err(Error::config("benchmark.sweep_lambda0", "every λ⁰ must be at least alm.lambda_min"));
        }
        if self.reduction.mode != Mode::Full3d && problem.sde.sigma_pz != 0.0 {
            return Err(Error::config("sde.sigma_pz", "price-irradiance correlation is only supported in full3d mode"));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let h = &self.horizon;
        TimeGrid::new(h.t0, h.t_end, h.dt).map_err(in_section("horizon"))
    }

    pub fn problem(&self) -> Result<PvProblem> {
        let s = &self.sde;
        let base = &self.base_dir;
        let sde = SdeParams {
            kappa_z: s.kappa_z,
            kappa_pi: s.kappa_pi,
            sigma_zz: s.sigma_zz,
            sigma_pz: s.sigma_pz,
            sigma_pp: s.sigma_pp,
            sigma_ee: s.sigma_ee,
            theta_z: s.theta_z.build("sde.theta_z", Synthetic::ClearSkyIndex, base)?,
            theta_pi: s.theta_pi.build("sde.theta_pi", Synthetic::Price, base)?,
        };
        let p = &self.pv;
        let inclination = match &p.inclination {
            Some(c) => Some(c.build("pv.inclination", Synthetic::Zenith, base)?),
            None => None,
        };
        let pv = PvParams {
            area: p.area,
            efficiency: p.efficiency,
            geometry: SolarGeometry {
                day_of_year: p.day_of_year,
                zenith: p.zenith.build("pv.zenith", Synthetic::Zenith, base)?,
                inclination,
                tilt: p.tilt,
            },
        };
        let horizon = (self.horizon.t0, self.horizon.t_end);
        sde.validate(horizon).map_err(in_section("sde"))?;
        pv.validate(horizon).map_err(in_section("pv"))?;
        let bounds = ControlBounds::new(self.bounds.p_min, self.bounds.p_max).map_err(in_section("bounds"))?;
        let c = &self.constraints;
        PvProblem::new(sde, pv, bounds, (c.energy_min, c.energy_max), c.terminal_price, horizon)
            .map_err(in_section("constraints"))
    }

    pub fn initial(&self, problem: &PvProblem) -> Result<InitialDistribution> {
        let mean = match self.initial.mean {
            Some(m) => m.to_vec(),
            None => InitialDistribution::pv_default(problem).mean,
        };
        let init = InitialDistribution::new(mean, self.initial.variance.to_vec()).map_err(in_section("initial"))?;
        let axes = self.axes(1.0);
        let lower: Vec<f64> = axes.iter().map(|a| a.0).collect();
        let upper: Vec<f64> = axes.iter().map(|a| a.1).collect();
        let inside = init.mass_inside(&lower, &upper);
        if inside < 0.999 {
            return Err(Error::config(
                "initial",
                format!("only {inside:.5} of the initial mass lies inside the mesh (need ≥ 0.999)"),
            ));
        }
        Ok(init)
    }

    /// (Z, Π, ℰ) axes of the reduced modes with node counts scaled by
    /// `factor` (interval counts scale, at least 3 nodes).
    pub fn axes(&self, factor: f64) -> [AxisSpec; 3] {
        let m = &self.mesh;
        [m.z, m.price, m.energy].map(|(a, b, n)| (a, b, scaled(n, factor)))
    }

    /// Same bounds on the coarse full3d node counts.
    pub fn full3d_axes(&self, factor: f64) -> [AxisSpec; 3] {
        let m = &self.mesh;
        let mut out = self.axes(1.0);
        for (axis, &n) in out.iter_mut().zip(&m.full3d) {
            axis.2 = scaled(n, factor);
        }
        out
    }

    /// Digest of the whole configuration.
    pub fn config_hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes()))
    }

    /// Digest of the model sections and the contents of any curve CSVs.
    /// Runs with equal model hashes solve the same stochastic problem.
    pub fn model_hash(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Model<'a> {
            sde: &'a SdeSection,
            pv: &'a PvSection,
            bounds: &'a BoundsSection,
            constraints: &'a ConstraintSection,
            initial: &'a InitialSection,
            horizon: &'a HorizonSection,
            curves: Vec<String>,
        }
        let specs = [Some(&self.sde.theta_z), Some(&self.sde.theta_pi), Some(&self.pv.zenith), self.pv.inclination.as_ref()];
        let mut curves = Vec::new();
        for path in specs.into_iter().flatten().filter_map(|c| c.csv_path(&self.base_dir)) {
            let bytes = std::fs::read(&path).map_err(|e| Error::File { path: path.clone(), message: e.to_string() })?;
            curves.push(sha256_hex(&bytes));
        }
        let model = Model {
            sde: &self.sde,
            pv: &self.pv,
            bounds: &self.bounds,
            constraints: &self.constraints,
            initial: &self.initial,
            horizon: &self.horizon,
            curves,
        };
        let text = toml::to_string(&model).map_err(|e| Error::config("toml", e.to_string()))?;
        Ok(sha256_hex(text.as_bytes()))
    }
}

fn check_axis(name: &str, (a, b, n): AxisSpec) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::config(name, format!("bounds ({a}, {b}) must satisfy lower < upper")));
    }
    if n < 3 {
        return Err(Error::config(name, format!("node count {n} below 3")));
    }
    Ok(())
}
