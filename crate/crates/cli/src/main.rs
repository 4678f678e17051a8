//! `slipflow`: deterministic experiment runner.
//!
//! Exit status is 0 when every configured tolerance holds, 1 on a tolerance failure or a
//! numerical error, 2 when the command line or config does not validate.

mod config;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("config does not match the schema: {0}")]
    Schema(serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config is for `{found}` but the `{requested}` subcommand was invoked")]
    Mismatch { found: &'static str, requested: &'static str },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Numerics(#[from] slipflow::Error),
    #[error("input: {0}")]
    Input(String),
    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing artifacts: {0}")]
    Json(#[from] serde_json::Error),
    #[error("writing table: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Parser)]
#[command(name = "slipflow", version, about = "Slip-boundary Stokes experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON experiment config (see `slipflow schema`).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for summary.json, tables/*.csv and sweeps.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for internal parallelism.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Half-space solve on the manufactured fixture or on field files.
    HalfspaceVerify(RunArgs),
    /// Rough-strip slip problem by preconditioned sweeps.
    RoughSolve(RunArgs),
    /// Non-divergence form: agreement with the divergence form and H2 convergence.
    NondivSolve(RunArgs),
    /// Neumann problem on the rough strip against a manufactured solution.
    NeumannVerify(RunArgs),
    /// Wedge exponents and integrability verdicts.
    Sharpness(RunArgs),
    /// Fractional seminorm calibration and multiplier bounds.
    Norms(RunArgs),
    /// Print the JSON schema of the config file.
    Schema,
}

impl Command {
    fn split(self) -> Option<(&'static str, RunArgs)> {
        Some(match self {
            Self::HalfspaceVerify(a) => ("halfspace-verify", a),
            Self::RoughSolve(a) => ("rough-solve", a),
            Self::NondivSolve(a) => ("nondiv-solve", a),
            Self::NeumannVerify(a) => ("neumann-verify", a),
            Self::Sharpness(a) => ("sharpness", a),
            Self::Norms(a) => ("norms", a),
            Self::Schema => return None,
        })
    }
}

fn load(requested: &'static str, args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.name() != requested {
        return Err(ConfigError::Mismatch {
            found: cfg.name(),
            requested,
        });
    }
    if let Some(s) = args.seed {
        cfg.set_seed(s);
    }
    if args.threads == Some(0) {
        return Err(ConfigError::Invalid("--threads must be at least 1".into()));
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let Some((requested, args)) = cli.command.split() else {
        let schema = schemars::schema_for!(ExperimentConfig);
        println!("{}", serde_json::to_string_pretty(&schema).expect("schema serializes"));
        return ExitCode::SUCCESS;
    };
    env_logger::Builder::new()
        .filter_level(if args.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .format_timestamp(None)
        .init();

    let cfg = match load(requested, &args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(t) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    // Everything is computed before the output directory is touched.
    let report = match run::run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {requested} failed: {e}");
            return ExitCode::from(1);
        }
    };
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    if let Err(e) = report::write_artifacts(&args.out, requested, cfg.seed(), &echo, &report) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    for c in &report.criteria {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        log::info!("{verdict} {}: {:e} (tolerance {:e})", c.name, c.value, c.tolerance);
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        for c in report.failures() {
            eprintln!("FAIL {}: value {:e} vs tolerance {:e}", c.name, c.value, c.tolerance);
        }
        ExitCode::from(1)
    }
}
