//! `balance-sim`: command-line driver for the load-balancing toolkit.

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Parser;
use serde::Serialize;

use artifacts::Artifacts;
use config::{Command, ExperimentConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "balance-sim", version, about = "Coupled simulation of randomized load-balancing policies")]
struct Args {
    command: Command,
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config. Default `out/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replications; overrides the config.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    command: Command,
    seed: u64,
    config: &'a ExperimentConfig,
    config_path: String,
    parallel: bool,
    files: &'a [String],
    started_unix: f64,
    finished_unix: f64,
    wall_time_secs: f64,
    status: &'static str,
    failures: &'a [String],
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn execute(args: Args) -> Result<(), CliError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    if config.reps == 0 {
        return Err(CliError::Config("reps must be at least 1".into()));
    }
    config.command = Some(args.command);
    let root = args
        .out
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(args.command.to_string()));
    config.out = Some(root.clone());

    let started = unix_now();
    let clock = Instant::now();
    let mut out = Artifacts::create(&root)?;
    let failures = commands::run(args.command, &config, &mut out)?;
    let mut files = out.files().to_vec();
    files.push("manifest.json".into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        core_version: balance_core::VERSION,
        command: args.command,
        seed: config.seed,
        config: &config,
        config_path: args.config.display().to_string(),
        parallel: config.parallel && cfg!(feature = "parallel"),
        files: &files,
        started_unix: started,
        finished_unix: unix_now(),
        wall_time_secs: clock.elapsed().as_secs_f64(),
        status: if failures.is_empty() { "pass" } else { "fail" },
        failures: &failures,
    };
    out.json("manifest.json", &manifest)?;
    println!("{}: wrote {} files to {}", args.command, files.len(), out.root().display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Assertion(failures))
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim().replace('\n', " "));
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
