//! Run orchestration: solve → simulate → bid pipelines per mode, the
//! benchmark suite, λ⁰ sweeps, and run comparison. Every run directory gets
//! flat CSV tables, a JSON summary and a manifest with SHA-256 checksums.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alm::{expected_objective, relative_l2_difference, run_alm, AlmParams, IterationRecord, Phase};
use crate::benchmarks::{evaluate_rule, mpc_run, MpcRun, Rule, RuleAudit, TimePolicy};
use crate::config::{Mode, ScenarioConfig};
use crate::error::{Error, Result};
use crate::fp::{fp_solve, project_initial, FpOptions};
use crate::generator::Discretization;
use crate::grid::{Field, TensorMesh, TimeGrid};
use crate::hjb::HjbOptions;
use crate::io::{read_json, sha256_file, write_json, write_records, write_table};
use crate::model::{ControlProblem, InitialDistribution, PvProblem};
use crate::par;
use crate::reduction::prepare_reduced;
use crate::sim::{capacity_firming, euler_maruyama, evaluate_revenue, expected_control, irradiance_table, BidSchedule};
use crate::sim::{FieldPolicy, PathBundle, RevenueStats};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Simulate,
    Bid,
    Benchmark,
    Sweep,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub command: Command,
    /// Defaults to the config's reduction mode.
    pub mode: Option<Mode>,
    /// Defaults to the config's benchmark seed.
    pub seed: Option<u64>,
    /// Defaults to the config's output directory.
    pub out: Option<PathBuf>,
    pub mesh_scale: f64,
    pub enable_full3d: bool,
}

impl RunOptions {
    pub fn new(command: Command) -> Self {
        Self { command, mode: None, seed: None, out: None, mesh_scale: 1.0, enable_full3d: false }
    }
}

/// Solver output of one mode, with the density recomputed under the
/// returned policy so that every reported expectation matches it.
pub struct ModeSolution {
    pub mode: Mode,
    pub problem: PvProblem,
    pub init: InitialDistribution,
    pub grid: TimeGrid,
    /// Feedback on the solver mesh; reads the coordinates `mode.controlled()`.
    pub control: Field,
    pub value: Field,
    pub density: Field,
    pub mass: Vec<f64>,
    /// E[(Z, Π, ℰ)] per time level.
    pub means: Vec<[f64; 3]>,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    /// FP-quadrature objective of the returned policy.
    pub objective: f64,
    /// ∫v(t, y)φ(t, y)dy.
    pub expected_v0: f64,
    pub hjb_warnings: usize,
    pub wall_seconds: f64,
}

pub fn solve_mode(
    config: &ScenarioConfig,
    mode: Mode,
    mesh_scale: f64,
    enable_full3d: bool,
    alm: &AlmParams,
) -> Result<ModeSolution> {
    if mode == Mode::Full3d && !enable_full3d {
        return Err(Error::config("mode", "full3d runs take hours at the default mesh; pass --enable-full3d"));
    }
    if !(mesh_scale > 0.0 && mesh_scale.is_finite()) {
        return Err(Error::config("mesh_scale", format!("must be positive, got {mesh_scale}")));
    }
    let clock = Instant::now();
    let problem = config.problem()?;
    let init = config.initial(&problem)?;
    let grid = config.time_grid()?;
    let fp_opts = FpOptions::default();
    let hjb_opts = HjbOptions::default();
    let steps = grid.len();
    let (outcome, fp, means, expected_v0, objective) = match mode.partition() {
        Some(partition) => {
            let axes = config.axes(mesh_scale);
            let full: Arc<dyn ControlProblem> = Arc::new(problem.clone());
            let setup = prepare_reduced(full, &partition, &init, &axes, &grid, &fp_opts, 0)?;
            let reduced = &*setup.problem;
            let disc = &setup.discretization;
            let outcome = run_alm(reduced, disc, &grid, &setup.phi0, alm, &fp_opts, &hjb_opts)?;
            let fp = fp_solve(reduced, disc, &grid, &outcome.hjb.control, &setup.phi0, &fp_opts)?;
            let mut means = vec![[0.0; 3]; steps];
            for (m, row) in means.iter_mut().enumerate() {
                for (d, v) in row.iter_mut().enumerate() {
                    *v = match partition.controlled.iter().position(|&c| c == d) {
                        Some(k) => fp.mean(m, k),
                        None => reduced.bank().mean(d, m).expect("every uncontrolled dim has a marginal"),
                    };
                }
            }
            let v0 = weighted(&fp.density, &outcome.hjb.value);
            let objective = expected_objective(reduced, &fp, &outcome.hjb.control);
            (outcome, fp, means, v0, objective)
        }
        None => {
            let axes = config.full3d_axes(mesh_scale);
            let bounds: Vec<_> = axes.iter().map(|a| (a.0, a.1)).collect();
            let counts: Vec<_> = axes.iter().map(|a| a.2).collect();
            let mesh = Arc::new(TensorMesh::new(&bounds, &counts)?);
            let disc = Discretization::new(mesh.clone());
            let phi0 = project_initial(&mesh, &init)?;
            let outcome = run_alm(&problem, &disc, &grid, &phi0, alm, &fp_opts, &hjb_opts)?;
            let fp = fp_solve(&problem, &disc, &grid, &outcome.hjb.control, &phi0, &fp_opts)?;
            let means = (0..steps).map(|m| [fp.mean(m, 0), fp.mean(m, 1), fp.mean(m, 2)]).collect();
            let v0 = weighted(&fp.density, &outcome.hjb.value);
            let objective = expected_objective(&problem, &fp, &outcome.hjb.control);
            (outcome, fp, means, v0, objective)
        }
    };
    Ok(ModeSolution {
        mode,
        problem,
        init,
        grid,
        control: outcome.hjb.control,
        value: outcome.hjb.value,
        density: fp.density,
        mass: fp.mass,
        means,
        history: outcome.history,
        converged: outcome.converged,
        objective,
        expected_v0,
        hjb_warnings: outcome.hjb.warnings,
        wall_seconds: clock.elapsed().as_secs_f64(),
    })
}

fn weighted(density: &Field, value: &Field) -> f64 {
    let w = density.mesh.weights();
    density.slice(0).iter().zip(value.slice(0)).zip(w).map(|((p, v), w)| p * v * w).sum()
}

impl ModeSolution {
    pub fn policy(&self) -> Result<FieldPolicy<'_>> {
        FieldPolicy::new(&self.control, self.mode.controlled(), self.problem.bounds)
    }

    /// Monte Carlo run of the feedback on the full three-state model.
    pub fn simulate(&self, paths: usize, seed: u64) -> Result<(PathBundle, RevenueStats)> {
        let policy = self.policy()?;
        let bundle = euler_maruyama(&self.problem, &policy, &self.init, &self.grid, paths, seed)?;
        let revenue = evaluate_revenue(&bundle, &self.problem);
        Ok((bundle, revenue))
    }

    /// E[P_bat], E[P_solar] per step and the hourly bids.
    pub fn power_profile(&self) -> Result<PowerProfile> {
        let battery = expected_control(&self.control, &self.density)?;
        let solar: Vec<f64> =
            (0..self.grid.steps).map(|m| self.problem.solar_power(self.grid.time(m), self.means[m][0])).collect();
        let bids = capacity_firming(&battery, &solar, &self.grid)?;
        Ok(PowerProfile { battery, solar, bids })
    }
}

pub struct PowerProfile {
    pub battery: Vec<f64>,
    pub solar: Vec<f64>,
    pub bids: BidSchedule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub validation_error: bool,
}

/// One row of the run's result table: a solved mode or a benchmark controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub label: String,
    /// FP-quadrature objective (solved modes).
    pub objective: Option<f64>,
    pub mc_mean: Option<f64>,
    pub mc_std_error: Option<f64>,
    pub expected_v0: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda0: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Against the previous λ⁰ of the sweep.
    pub relative_l2_change: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub command: Command,
    pub mode: Option<Mode>,
    pub seed: u64,
    pub mesh_scale: f64,
    pub execution: String,
    pub config_hash: String,
    pub model_hash: String,
    pub stages: Vec<StageRecord>,
    pub convergence: BTreeMap<String, bool>,
    pub results: Vec<ResultRow>,
    pub sweep: Vec<SweepRow>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    /// 0 success, 2 validation error, 3 non-convergence, 1 other failures.
    pub fn exit_code(&self) -> i32 {
        if self.stages.iter().any(|s| s.validation_error) {
            2
        } else if self.stages.iter().any(|s| s.status == StageStatus::Failed) {
            1
        } else if self.convergence.values().any(|c| !c) {
            3
        } else {
            0
        }
    }
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let p = self.path(name);
        write_table(&p, header, rows)
    }

    fn records<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<()> {
        let p = self.path(name);
        write_records(&p, records)
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, value)
    }

    fn field(&mut self, field: &Field, base: &str) -> Result<()> {
        let written = field.dump(&self.dir, base)?;
        self.files.extend(written);
        Ok(())
    }
}

struct Recorder {
    stages: Vec<StageRecord>,
}

impl Recorder {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Option<T> {
        let clock = Instant::now();
        let result = f();
        let wall_seconds = clock.elapsed().as_secs_f64();
        let (status, error, validation_error, value) = match result {
            Ok(v) => (StageStatus::Ok, None, false, Some(v)),
            Err(e) => (StageStatus::Failed, Some(e.to_string()), e.is_validation(), None),
        };
        self.stages.push(StageRecord { name: name.into(), status, wall_seconds, error, validation_error });
        value
    }
}

/// Creates `dir`, or clears the files a previous manifest there lists.
/// Refuses directories holding anything else.
fn prepare_output_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = dir.join(MANIFEST);
    if manifest.exists() {
        let old: RunManifest = read_json(&manifest)?;
        for f in &old.files {
            let p = dir.join(&f.path);
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
        std::fs::remove_file(&manifest)?;
    }
    if let Some(entry) = std::fs::read_dir(dir)?.next() {
        return Err(Error::config(
            "out",
            format!("{} holds files not produced by a previous run (e.g. {:?})", dir.display(), entry?.file_name()),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    iteration: usize,
    objective: f64,
    control_change: f64,
    multiplier_change: f64,
    violation: f64,
    lambda: f64,
    tau: f64,
    phase: Phase,
}

#[derive(Serialize)]
struct BenchmarkRow<'a> {
    controller: &'a str,
    revenue: f64,
    std_error: f64,
    ci99_low: f64,
    ci99_high: f64,
    failed_paths: usize,
    guard_violations: Option<usize>,
    max_overshoot: f64,
}

#[derive(Serialize)]
struct ModeDetails {
    mode: Mode,
    converged: bool,
    iterations: usize,
    objective: f64,
    expected_v0: f64,
    max_mass_drift: f64,
    bang_bang_fraction: f64,
    hjb_warnings: usize,
    solve_seconds: f64,
    iteration_seconds: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo: Option<RevenueStats>,
}

#[derive(Serialize)]
struct ControllerDetails {
    controller: String,
    revenue: RevenueStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    audit: Option<RuleAudit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mpc: Option<MpcRun>,
    wall_seconds: f64,
}

#[derive(Serialize, Default)]
struct Summary {
    modes: Vec<ModeDetails>,
    controllers: Vec<ControllerDetails>,
    sweep: Vec<SweepRow>,
}

/// Fraction of control nodes at P_min or P_max.
pub fn bang_bang_fraction(control: &Field, problem: &PvProblem) -> f64 {
    let b = problem.bounds;
    let v = control.values();
    v.iter().filter(|&&u| u == b.p_min || u == b.p_max).count() as f64 / v.len() as f64
}

fn write_mode_outputs(out: &mut Outputs, sol: &ModeSolution) -> Result<()> {
    let name = sol.mode.name();
    let history: Vec<HistoryRow> = sol
        .history
        .iter()
        .map(|r| HistoryRow {
            iteration: r.iteration,
            objective: r.objective,
            control_change: r.control_change,
            multiplier_change: r.multiplier_change,
            violation: r.violation,
            lambda: r.lambda,
            tau: r.tau,
            phase: r.phase,
        })
        .collect();
    out.records(&format!("{name}_alm_history.csv"), &history)?;
    let rows: Vec<Vec<f64>> = (0..sol.grid.len())
        .map(|m| {
            let e = sol.means[m];
            vec![sol.grid.time(m), e[0], e[1], e[2], sol.mass[m]]
        })
        .collect();
    out.table(&format!("{name}_expectations.csv"), &["s", "mean_z", "mean_price", "mean_energy", "mass"], &rows)?;
    let mean_z: Vec<f64> = sol.means.iter().map(|e| e[0]).collect();
    let rows: Vec<Vec<f64>> = irradiance_table(&sol.problem, &sol.grid, &mean_z).iter().map(|r| r.to_vec()).collect();
    out.table(
        &format!("{name}_irradiance.csv"),
        &["s", "expected_irradiance", "clear_sky_irradiance", "irradiance"],
        &rows,
    )?;
    out.field(&sol.control, &format!("{name}_policy"))?;
    out.field(&sol.value, &format!("{name}_value"))?;
    out.field(&sol.density, &format!("{name}_density"))?;
    Ok(())
}

fn write_mc_outputs(out: &mut Outputs, name: &str, bundle: &PathBundle) -> Result<()> {
    let g = &bundle.grid;
    let rows: Vec<Vec<f64>> = (0..g.len())
        .map(|m| {
            let mut row = vec![g.time(m)];
            for axis in 0..3 {
                let (mean, var) = bundle.moments(m, axis);
                row.extend([mean, var]);
            }
            row.push(if m < g.steps { bundle.mean_control(m) } else { f64::NAN });
            row
        })
        .collect();
    out.table(
        &format!("{name}_mc_moments.csv"),
        &["s", "mean_z", "var_z", "mean_price", "var_price", "mean_energy", "var_energy", "mean_control"],
        &rows,
    )
}

fn write_power_outputs(out: &mut Outputs, sol: &ModeSolution, profile: &PowerProfile) -> Result<()> {
    let name = sol.mode.name();
    let g = &sol.grid;
    let rows: Vec<Vec<f64>> = (0..g.steps)
        .map(|m| {
            let s = g.time(m);
            let hour = ((s - profile.bids.start_hour).floor() as usize).min(profile.bids.values.len() - 1);
            let (b, p) = (profile.battery[m], profile.solar[m]);
            vec![s, b, p, b + p, profile.bids.values[hour]]
        })
        .collect();
    out.table(&format!("{name}_power.csv"), &["s", "p_battery", "p_solar", "p_grid", "bid"], &rows)?;
    let rows: Vec<Vec<f64>> = profile
        .bids
        .values
        .iter()
        .enumerate()
        .map(|(h, v)| vec![profile.bids.start_hour + h as f64, *v])
        .collect();
    out.table(&format!("{name}_bids.csv"), &["hour", "bid"], &rows)
}

/// Runs the command and writes its outputs. Errors are returned only when
/// nothing could be written; stage failures land in the manifest.
pub fn run(config: &ScenarioConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mode = opts.mode.unwrap_or(config.reduction.mode);
    let seed = opts.seed.unwrap_or(config.benchmark.seed);
    let dir = opts.out.clone().unwrap_or_else(|| config.output.dir.clone());
    if mode == Mode::Full3d && !opts.enable_full3d && opts.command != Command::Benchmark {
        return Err(Error::config("mode", "full3d runs take hours at the default mesh; pass --enable-full3d"));
    }
    prepare_output_dir(&dir)?;
    let mut out = Outputs { dir: dir.clone(), files: Vec::new() };
    let mut rec = Recorder { stages: Vec::new() };
    let mut convergence = BTreeMap::new();
    let mut results = Vec::new();
    let mut summary = Summary::default();
    let paths = config.benchmark.paths;

    let text = config.to_toml()?;
    let p = out.path("config.toml");
    std::fs::write(p, text)?;

    match opts.command {
        Command::Solve | Command::Simulate | Command::Bid => {
            let sol = rec.stage("solve", || {
                let sol = solve_mode(config, mode, opts.mesh_scale, opts.enable_full3d, &config.alm)?;
                write_mode_outputs(&mut out, &sol)?;
                Ok(sol)
            });
            if let Some(sol) = sol {
                convergence.insert(format!("{}.alm", mode.name()), sol.converged);
                let mut row = ResultRow {
                    label: mode.name().into(),
                    objective: Some(sol.objective),
                    mc_mean: None,
                    mc_std_error: None,
                    expected_v0: Some(sol.expected_v0),
                    iterations: Some(sol.history.len()),
                    converged: Some(sol.converged),
                    wall_seconds: sol.wall_seconds,
                };
                let mut details = ModeDetails {
                    mode,
                    converged: sol.converged,
                    iterations: sol.history.len(),
                    objective: sol.objective,
                    expected_v0: sol.expected_v0,
                    max_mass_drift: sol.mass.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max),
                    bang_bang_fraction: bang_bang_fraction(&sol.control, &sol.problem),
                    hjb_warnings: sol.hjb_warnings,
                    solve_seconds: sol.wall_seconds,
                    iteration_seconds: sol.history.iter().map(|r| r.wall_seconds).collect(),
                    monte_carlo: None,
                };
                if opts.command != Command::Solve {
                    let stats = rec.stage("simulate", || {
                        let (bundle, revenue) = sol.simulate(paths, seed)?;
                        write_mc_outputs(&mut out, mode.name(), &bundle)?;
                        Ok(revenue)
                    });
                    if let Some(stats) = stats {
                        row.mc_mean = Some(stats.mean);
                        row.mc_std_error = Some(stats.std_error);
                        details.monte_carlo = Some(stats);
                    }
                }
                if opts.command == Command::Bid {
                    rec.stage("bid", || {
                        let profile = sol.power_profile()?;
                        write_power_outputs(&mut out, &sol, &profile)
                    });
                }
                results.push(row);
                summary.modes.push(details);
            }
        }
        Command::Benchmark => {
            benchmark_stages(config, seed, &mut out, &mut rec, &mut convergence, &mut results, &mut summary);
        }
        Command::Sweep => {
            let rows = rec.stage("sweep", || {
                let sweep = lambda_sweep(config, mode, opts.mesh_scale, opts.enable_full3d, &config.benchmark.sweep_lambda0)?;
                out.records(&format!("{}_sweep.csv", mode.name()), &sweep.rows)?;
                Ok(sweep)
            });
            if let Some(sweep) = rows {
                for r in &sweep.rows {
                    convergence.insert(format!("{}.alm.lambda0={}", mode.name(), r.lambda0), r.converged);
                }
                summary.sweep = sweep.rows.clone();
            }
        }
    }

    out.json("summary.json", &summary)?;
    let mut files = Vec::new();
    for p in &out.files {
        let rel = p.strip_prefix(&dir).unwrap_or(p).to_string_lossy().into_owned();
        let bytes = std::fs::metadata(p)?.len();
        files.push(FileEntry { path: rel, sha256: sha256_file(p)?, bytes });
    }
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION").into(),
        command: opts.command,
        mode: (opts.command != Command::Benchmark).then_some(mode),
        seed,
        mesh_scale: opts.mesh_scale,
        execution: format!("{:?}", par::execution()).to_lowercase(),
        config_hash: config.config_hash()?,
        model_hash: config.model_hash()?,
        stages: rec.stages,
        convergence,
        results,
        sweep: summary.sweep,
        files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn benchmark_stages(
    config: &ScenarioConfig,
    seed: u64,
    out: &mut Outputs,
    rec: &mut Recorder,
    convergence: &mut BTreeMap<String, bool>,
    results: &mut Vec<ResultRow>,
    summary: &mut Summary,
) {
    let setup = rec.stage("benchmark.setup", || {
        let problem = config.problem()?;
        let init = config.initial(&problem)?;
        Ok((problem, init, config.time_grid()?))
    });
    let Some((problem, init, grid)) = setup else { return };
    let b = &config.benchmark;
    let mut rows = Vec::new();
    for rule in [Rule::PriceThreshold, Rule::TimeOfUse] {
        let clock = Instant::now();
        let ev = rec.stage(&format!("benchmark.{}", rule.name()), || {
            let ev = evaluate_rule(rule, &problem, b.threshold, &b.tou, &init, &grid, b.paths, seed)?;
            write_mc_outputs(out, rule.name(), &ev.bundle)?;
            Ok(ev)
        });
        if let Some(ev) = ev {
            let wall = clock.elapsed().as_secs_f64();
            rows.push(benchmark_row(rule.name(), &ev.revenue, Some(ev.audit.guard_violations), ev.audit.max_overshoot));
            results.push(controller_result(rule.name(), &ev.revenue, None, wall));
            summary.controllers.push(ControllerDetails {
                controller: rule.name().into(),
                revenue: ev.revenue,
                audit: Some(ev.audit),
                mpc: None,
                wall_seconds: wall,
            });
        }
    }
    let clock = Instant::now();
    let mpc = rec.stage("benchmark.mpc", || {
        let x0 = [init.mean[0], init.mean[1], init.mean[2]];
        let run = mpc_run(&problem, x0, &b.mpc, seed)?;
        let rows: Vec<Vec<f64>> = run
            .states
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let u = run.controls.get(k).copied().unwrap_or(f64::NAN);
                vec![run.t0 + k as f64 * run.dt, x[0], x[1], x[2], u]
            })
            .collect();
        out.table("mpc_plan.csv", &["s", "z", "price", "energy", "control"], &rows)?;
        let policy = TimePolicy { t0: run.t0, dt: run.dt, values: run.controls.clone() };
        let bundle = euler_maruyama(&problem, &policy, &init, &grid, b.paths, seed)?;
        write_mc_outputs(out, "mpc", &bundle)?;
        let revenue = evaluate_revenue(&bundle, &problem);
        let (lo, hi) = problem.energy_bounds();
        Ok((run, revenue, bundle.max_overshoot(2, lo, hi)))
    });
    if let Some((run, revenue, overshoot)) = mpc {
        let wall = clock.elapsed().as_secs_f64();
        convergence.insert("mpc".into(), run.converged());
        rows.push(benchmark_row("mpc", &revenue, None, overshoot));
        results.push(controller_result("mpc", &revenue, Some(run.converged()), wall));
        summary.controllers.push(ControllerDetails {
            controller: "mpc".into(),
            revenue,
            audit: None,
            mpc: Some(run),
            wall_seconds: wall,
        });
    }
    rec.stage("benchmark.table", || out.records("benchmark.csv", &rows));
}

fn benchmark_row<'a>(name: &'a str, r: &RevenueStats, guard: Option<usize>, overshoot: f64) -> BenchmarkRow<'a> {
    let (lo, hi) = r.interval(0.99);
    BenchmarkRow {
        controller: name,
        revenue: r.mean,
        std_error: r.std_error,
        ci99_low: lo,
        ci99_high: hi,
        failed_paths: r.failed_paths,
        guard_violations: guard,
        max_overshoot: overshoot,
    }
}

fn controller_result(name: &str, r: &RevenueStats, converged: Option<bool>, wall: f64) -> ResultRow {
    ResultRow {
        label: name.into(),
        objective: None,
        mc_mean: Some(r.mean),
        mc_std_error: Some(r.std_error),
        expected_v0: None,
        iterations: None,
        converged,
        wall_seconds: wall,
    }
}

pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub solutions: Vec<ModeSolution>,
}

/// Solves `mode` once per λ⁰ (concurrently) with the other ALM settings
/// unchanged.
pub fn lambda_sweep(
    config: &ScenarioConfig,
    mode: Mode,
    mesh_scale: f64,
    enable_full3d: bool,
    lambdas: &[f64],
) -> Result<Sweep> {
    if lambdas.is_empty() {
        return Err(Error::config("benchmark.sweep_lambda0", "the sweep needs at least one λ⁰"));
    }
    let runs = par::map_range(lambdas.len(), |i| {
        let alm = AlmParams { lambda0: lambdas[i], ..config.alm };
        solve_mode(config, mode, mesh_scale, enable_full3d, &alm)
    });
    let solutions = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = solutions
        .iter()
        .enumerate()
        .map(|(i, sol)| SweepRow {
            lambda0: lambdas[i],
            iterations: sol.history.len(),
            converged: sol.converged,
            relative_l2_change: (i > 0).then(|| relative_l2_difference(&sol.control, &solutions[i - 1].control)),
            wall_seconds: sol.wall_seconds,
        })
        .collect();
    Ok(Sweep { rows, solutions })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub run: String,
    pub label: String,
    pub objective: Option<f64>,
    pub mc_mean: Option<f64>,
    pub expected_v0: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub wall_seconds: f64,
    /// J of this row minus J of the first row, J being the Monte Carlo
    /// mean when present and the FP objective otherwise.
    pub difference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub model_hash: String,
    pub rows: Vec<ComparisonRow>,
    pub sweep: Vec<(String, SweepRow)>,
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST)
    } else {
        p.to_path_buf()
    }
}

/// Tabulates the results of ≥ 2 runs of the same model.
pub fn compare(runs: &[PathBuf]) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::config("compare", "need at least two manifests"));
    }
    let mut manifests = Vec::new();
    for r in runs {
        let path = manifest_path(r);
        let m: RunManifest = read_json(&path)?;
        let name = path.parent().and_then(|p| p.file_name()).map_or_else(|| r.display().to_string(), |n| n.to_string_lossy().into_owned());
        manifests.push((name, m));
    }
    let model_hash = manifests[0].1.model_hash.clone();
    for (name, m) in &manifests[1..] {
        if m.model_hash != model_hash {
            return Err(Error::config(
                "compare",
                format!("run {name} solves a different model (hash {} vs {})", &m.model_hash[..12], &model_hash[..12]),
            ));
        }
    }
    let mut rows: Vec<ComparisonRow> = Vec::new();
    let mut sweep = Vec::new();
    for (name, m) in &manifests {
        for r in &m.results {
            rows.push(ComparisonRow {
                run: name.clone(),
                label: r.label.clone(),
                objective: r.objective,
                mc_mean: r.mc_mean,
                expected_v0: r.expected_v0,
                iterations: r.iterations,
                converged: r.converged,
                wall_seconds: r.wall_seconds,
                difference: None,
            });
        }
        sweep.extend(m.sweep.iter().map(|s| (name.clone(), s.clone())));
    }
    let j = |r: &ComparisonRow| r.mc_mean.or(r.objective);
    if let Some(first) = rows.first().and_then(j) {
        for r in &mut rows {
            r.difference = j(r).map(|v| v - first);
        }
    }
    Ok(Comparison { model_hash, rows, sweep })
}

fn cell<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

fn num(v: Option<f64>) -> String {
    cell(v.map(|v| format!("{v:.2}")))
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:<16} {:>12} {:>12} {:>12} {:>6} {:>9} {:>10} {:>10}",
            "run", "mode/controller", "J (FP)", "J (MC)", "E[v0]", "iters", "converged", "wall [s]", "ΔJ"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<16} {:<16} {:>12} {:>12} {:>12} {:>6} {:>9} {:>10.1} {:>10}",
                r.run,
                r.label,
                num(r.objective),
                num(r.mc_mean),
                num(r.expected_v0),
                cell(r.iterations),
                cell(r.converged),
                r.wall_seconds,
                num(r.difference)
            );
        }
        if !self.sweep.is_empty() {
            let _ = writeln!(s, "\n{:<16} {:>10} {:>6} {:>9} {:>14}", "run", "λ⁰", "iters", "converged", "rel. L² diff");
            for (run, r) in &self.sweep {
                let diff = cell(r.relative_l2_change.map(|v| format!("{v:.3}")));
                let _ = writeln!(s, "{:<16} {:>10} {:>6} {:>9} {:>14}", run, r.lambda0, r.iterations, r.converged, diff);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ScenarioConfig {
        let text = "[alm]\nmax_iter = 4\n[benchmark]\npaths = 200\nsweep_lambda0 = [100.0, 50.0]\n\
                    [benchmark.mpc]\nsamples = 100\nmax_iter = 5\nouter_iter = 1\n";
        ScenarioConfig::from_toml(text, Path::new(".")).unwrap()
    }

    fn run_in(dir: &Path, command: Command) -> RunManifest {
        let opts = RunOptions { out: Some(dir.to_path_buf()), ..RunOptions::new(command) };
        run(&small_config(), &opts).unwrap()
    }

    #[test]
    fn bid_run_lists_every_file_with_its_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_in(dir.path(), Command::Bid);
        assert!(m.stages.iter().all(|s| s.status == StageStatus::Ok), "{:?}", m.stages);
        let mut on_disk: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n != MANIFEST)
            .collect();
        on_disk.sort();
        let listed: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
        assert_eq!(listed, on_disk);
        for f in &m.files {
            assert_eq!(sha256_file(&dir.path().join(&f.path)).unwrap(), f.sha256);
        }
        let bids = std::fs::read_to_string(dir.path().join("energy1d_bids.csv")).unwrap();
        assert_eq!(bids.lines().count(), 25);
        // Four ALM iterations cannot converge.
        assert!(!m.convergence["energy1d.alm"]);
        assert_eq!(m.exit_code(), 3);
    }

    #[test]
    fn rerun_replaces_previous_outputs_and_refuses_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        run_in(dir.path(), Command::Bid);
        let m = run_in(dir.path(), Command::Solve);
        assert!(!dir.path().join("energy1d_bids.csv").exists());
        assert!(m.files.iter().all(|f| dir.path().join(&f.path).exists()));
        std::fs::write(dir.path().join("notes.txt"), "keep").unwrap();
        let opts = RunOptions { out: Some(dir.path().to_path_buf()), ..RunOptions::new(Command::Solve) };
        let err = run(&small_config(), &opts).unwrap_err();
        assert!(err.is_validation());
        assert!(dir.path().join("notes.txt").exists());
    }

    #[test]
    fn benchmark_has_one_row_per_controller() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_in(dir.path(), Command::Benchmark);
        let labels: Vec<_> = m.results.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["price_threshold", "tou", "mpc"]);
        let table = std::fs::read_to_string(dir.path().join("benchmark.csv")).unwrap();
        assert_eq!(table.lines().count(), 4);
        assert!(m.mode.is_none());
    }

    #[test]
    fn full3d_needs_the_flag() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { out: Some(dir.path().to_path_buf()), mode: Some(Mode::Full3d), ..RunOptions::new(Command::Solve) };
        assert!(run(&small_config(), &opts).unwrap_err().is_validation());
    }

    #[test]
    fn comparison_rejects_different_models_and_carries_sweeps() {
        let base = tempfile::tempdir().unwrap();
        let a = base.path().join("a");
        let b = base.path().join("b");
        let c = base.path().join("c");
        run_in(&a, Command::Solve);
        let opts = RunOptions { out: Some(b.clone()), ..RunOptions::new(Command::Sweep) };
        run(&small_config(), &opts).unwrap();
        let cmp = compare(&[a.clone(), b.join(MANIFEST)]).unwrap();
        assert_eq!(cmp.rows.len(), 1);
        assert_eq!(cmp.sweep.len(), 2);
        assert!(cmp.sweep[1].1.relative_l2_change.is_some());
        assert!(cmp.render().contains("λ⁰"));

        let mut other = small_config();
        other.constraints.energy_max = 5.0;
        run(&other, &RunOptions { out: Some(c.clone()), ..RunOptions::new(Command::Solve) }).unwrap();
        assert!(compare(&[a.clone(), c]).is_err());
        assert!(compare(&[a]).is_err());
    }
}
