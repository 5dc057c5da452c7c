//! `nldisp`: scenario-driven experiments for the logistic equation with
//! nonlocal dispersal.  Subcommands read a JSON scenario config and write
//! CSV tables, SVG line plots, and a JSON run report into the output
//! directory.
//!
//! Exit codes: 0 success, 2 config error, 3 no positive steady state,
//! 4 unresolvable feature (grid too coarse), 5 iteration limit, 1 anything
//! else (IO, internal invariant).

mod commands;
mod config;
mod output;

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::ScenarioConfig;

#[derive(Debug)]
pub enum CliError {
    /// Unusable config: parse failure, missing or inapplicable fields.
    Config(String),
    Core(nldisp_core::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                // Bad caller-supplied numbers are config errors too.
                nldisp_core::Error::Domain(_) => 2,
                nldisp_core::Error::NoPositiveSteadyState { .. } => 3,
                nldisp_core::Error::Resolution(_) => 4,
                nldisp_core::Error::IterationLimit { .. } => 5,
                nldisp_core::Error::Internal(_) => 1,
            },
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<nldisp_core::Error> for CliError {
    fn from(e: nldisp_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser)]
#[command(
    name = "nldisp",
    version,
    about = "Numerical experiments for logistic population models with nonlocal dispersal"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one steady state; writes theta.csv and report.json.
    Solve(RunArgs),
    /// Total population across a list of dispersal rates; writes sweep.csv
    /// and sweep.svg.
    Sweep(RunArgs),
    /// Concentrated-resource scaling experiment; writes scaling.csv and
    /// scaling.svg.
    Scaling(RunArgs),
    /// Global-mixing model: mean density across d with a unimodality
    /// certificate; writes mixing.csv and mixing.svg.
    Mixing(RunArgs),
    /// Principal eigenvalue only; writes report.json.
    Eig(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for per-d solves; defaults to all cores.  Results are
    /// byte-identical for every value.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NLDISP_LOG", "error")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(command: &Command) -> Result<(), CliError> {
    let started = Instant::now();
    let (name, args): (&'static str, &RunArgs) = match command {
        Command::Solve(a) => ("solve", a),
        Command::Sweep(a) => ("sweep", a),
        Command::Scaling(a) => ("scaling", a),
        Command::Mixing(a) => ("mixing", a),
        Command::Eig(a) => ("eig", a),
    };
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let text = fs::read_to_string(&args.config).map_err(CliError::Io)?;
    // Parse and validate before touching the output directory, so a bad
    // config leaves no files behind.
    let cfg = ScenarioConfig::from_json(&text)?;
    log::info!("{name}: parsed config from {}", args.config.display());
    fs::create_dir_all(&args.out).map_err(CliError::Io)?;
    let result = match command {
        Command::Solve(_) => commands::cmd_solve(&cfg, &args.out, started),
        Command::Sweep(_) => commands::cmd_sweep(&cfg, &args.out, started),
        Command::Scaling(_) => commands::cmd_scaling(&cfg, &args.out, started),
        Command::Mixing(_) => commands::cmd_mixing(&cfg, &args.out, started),
        Command::Eig(_) => commands::cmd_eig(&cfg, &args.out, started),
    };
    if result.is_ok() {
        log::info!("{name}: finished in {:.3}s", started.elapsed().as_secs_f64());
    }
    result
}
