use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fpcontrol::config::{Mode, ScenarioConfig};
use fpcontrol::par::{set_execution, Execution};
use fpcontrol::runner::{compare, run, Command, RunManifest, RunOptions, StageStatus};

/// Optimal battery dispatch for a PV plant via coupled Fokker-Planck / HJB
/// equations with expectation constraints.
#[derive(Parser)]
#[command(name = "fpcontrol", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the optimality system of one mode.
    Solve(RunArgs),
    /// Solve, then evaluate the feedback by Monte Carlo.
    Simulate(RunArgs),
    /// Solve, simulate and derive the hourly day-ahead bids.
    Bid(RunArgs),
    /// Evaluate the price-threshold, time-of-use and MPC controllers.
    Benchmark(RunArgs),
    /// Solve one mode for each initial penalty λ⁰ of the config.
    Sweep(RunArgs),
    /// Tabulate the results of two or more runs of the same model.
    Compare {
        /// Run directories or their manifest.json files.
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "full3d")]
    Full3d,
    #[value(name = "energy1d")]
    Energy1d,
    #[value(name = "price_energy2d")]
    PriceEnergy2d,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full3d => Mode::Full3d,
            ModeArg::Energy1d => Mode::Energy1d,
            ModeArg::PriceEnergy2d => Mode::PriceEnergy2d,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML; omitted means the default scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides [reduction] mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Overrides [benchmark] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides [output] dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Multiplies the number of mesh intervals per axis.
    #[arg(long, default_value_t = 1.0)]
    mesh_scale: f64,
    /// Allow the full three-dimensional solve.
    #[arg(long)]
    enable_full3d: bool,
    /// Run on one thread without the data-parallel kernels.
    #[arg(long)]
    sequential: bool,
}

fn load(path: Option<&Path>) -> fpcontrol::Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p),
        None => ScenarioConfig::from_toml("", Path::new(".")),
    }
}

fn report(m: &RunManifest) {
    for s in &m.stages {
        let status = match s.status {
            StageStatus::Ok => "ok",
            StageStatus::Failed => "FAILED",
        };
        println!("stage {:<28} {:>6} {:>9.2}s", s.name, status, s.wall_seconds);
        if let Some(e) = &s.error {
            println!("    {e}");
        }
    }
    for r in &m.results {
        let j = r.mc_mean.or(r.objective).map_or("-".to_string(), |v| format!("{v:.2}"));
        let conv = r.converged.map_or("-".to_string(), |c| c.to_string());
        println!("result {:<16} J = {:>10}  converged = {}", r.label, j, conv);
    }
    for (name, ok) in &m.convergence {
        if !ok {
            println!("not converged: {name}");
        }
    }
    println!("{} files written", m.files.len());
}

fn execute(command: Command, args: RunArgs) -> ExitCode {
    if args.sequential {
        set_execution(Execution::Sequential);
    }
    let config = match load(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions {
        command,
        mode: args.mode.map(Mode::from),
        seed: args.seed,
        out: args.out,
        mesh_scale: args.mesh_scale,
        enable_full3d: args.enable_full3d,
    };
    match run(&config, &opts) {
        Ok(manifest) => {
            report(&manifest);
            ExitCode::from(manifest.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Solve(a) => execute(Command::Solve, a),
        Cmd::Simulate(a) => execute(Command::Simulate, a),
        Cmd::Bid(a) => execute(Command::Bid, a),
        Cmd::Benchmark(a) => execute(Command::Benchmark, a),
        Cmd::Sweep(a) => execute(Command::Sweep, a),
        Cmd::Compare { runs } => match compare(&runs) {
            Ok(table) => {
                print!("{}", table.render());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(if e.is_validation() { 2 } else { 1 })
            }
        },
    }
}
