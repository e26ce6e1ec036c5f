//! `agifl`: run air-ground federated learning experiments from a config file.

mod commands;
mod config;
mod oracle;
mod svg;

use clap::{Args, Parser, Subcommand};
use commands::{Failure, RunOptions};
use config::Override;
use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

const AFTER_HELP: &str = "Any config key can be set from the command line as --section.key=value, \
for example --fl.max_rounds=10 or --scenario.placement=random. Such flags win over the file.";

#[derive(Parser)]
#[command(name = "agifl", version, about, after_help = AFTER_HELP)]
struct Cli {
    /// Worker threads for repeats and client training.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write per-repeat and averaged CSVs.
    Run(RunArgs),
    /// Run placement schemes on paired seeds and write comparison CSVs and SVG charts.
    ComparePlacement(RunArgs),
    /// Print brute-force reference values.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    max_rounds: Option<usize>,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Link rate in bit/s.
    Rate {
        #[arg(long, default_value_t = 5e5)]
        bandwidth_hz: f64,
        #[arg(long, default_value_t = 0.1)]
        tx_power_w: f64,
        #[arg(long, default_value_t = -50.0, allow_hyphen_values = true)]
        alpha0_db: f64,
        #[arg(long, default_value_t = -90.0, allow_hyphen_values = true)]
        noise_dbm: f64,
        #[arg(long, default_value_t = 100.0)]
        altitude_m: f64,
        #[arg(long, default_value_t = 0.0)]
        horizontal_m: f64,
    },
    /// Grid-search hovering point for users given as `x,y`.
    Placement {
        #[arg(required = true, allow_hyphen_values = true)]
        users: Vec<String>,
        #[arg(long, default_value_t = 100.0)]
        altitude_m: f64,
        #[arg(long, default_value_t = 1.0)]
        coarse_m: f64,
        #[arg(long, default_value_t = 0.01)]
        fine_m: f64,
    },
    /// Weighted mean of updates written as `[w1,w2,...]xN`.
    Aggregate {
        #[arg(required = true)]
        updates: Vec<String>,
    },
}

/// Pulls `--section.key=value` flags out of the argument list.
fn split_overrides(args: Vec<OsString>) -> (Vec<OsString>, Vec<Override>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.to_str().and_then(|s| s.strip_prefix("--")).and_then(Override::parse) {
            Some(o) => overrides.push(o),
            None => rest.push(a),
        }
    }
    (rest, overrides)
}

fn dispatch(cli: Cli, overrides: Vec<Override>) -> Result<(), Failure> {
    let run_options = |a: RunArgs| RunOptions {
        config: a.config,
        out: a.out,
        seed: a.seed,
        repeats: a.repeats,
        max_rounds: a.max_rounds,
        jobs: cli.jobs,
        overrides: overrides.clone(),
    };
    if !overrides.is_empty() && matches!(cli.command, Command::Oracle(_)) {
        return Err(Failure::config("config overrides do not apply to oracle commands"));
    }
    match cli.command {
        Command::Run(a) => commands::run(&run_options(a)),
        Command::ComparePlacement(a) => commands::compare_placement(&run_options(a)),
        Command::Oracle(o) => {
            let line = match o {
                OracleCommand::Rate {
                    bandwidth_hz,
                    tx_power_w,
                    alpha0_db,
                    noise_dbm,
                    altitude_m,
                    horizontal_m,
                } => oracle::rate(bandwidth_hz, tx_power_w, alpha0_db, noise_dbm, altitude_m, horizontal_m)?,
                OracleCommand::Placement {
                    users,
                    altitude_m,
                    coarse_m,
                    fine_m,
                } => oracle::placement(&users, altitude_m, coarse_m, fine_m)?,
                OracleCommand::Aggregate { updates } => oracle::aggregate(&updates)?,
            };
            println!("{line}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args_os().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
