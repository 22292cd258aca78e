//! `qppl`: train, apply and inspect MPS prototype models from a config file.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure
//! (divergence or a failed gradient check), 1 other I/O failure.

mod commands;
mod config;
mod dataset;
mod error;
mod model;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;
use crate::output::Run;

#[derive(Parser)]
#[command(name = "qppl", version, about = "Quantum-inspired prototype learning with matrix product states")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one prototype per class and channel and write a model directory.
    Train(Args),
    /// Nearest-prototype (or hierarchical) classification of the test part.
    Classify(Args),
    /// Anomaly scores against prototypes of the normal classes, with AUROC.
    Anomaly(Args),
    /// Distance matrices, t-SNE layouts and clustering scores.
    Embed(Args),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML run configuration.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Output directory (overrides `out` in the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override a config scalar, e.g. `--set train.epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(
    name: &str,
    args: &Args,
    command: fn(&config::Loaded, &mut Run) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let cfg = config::load(&args.config, &args.overrides)?;
    let out = match (&args.out, &cfg.config.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => cfg.resolve(o),
        (None, None) => return Err(CliError::Config("no output directory: pass --out or set `out`".into())),
    };
    let mut run = Run::create(out)?;
    command(&cfg, &mut run)?;
    run.finish(name, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Train(a) => execute("train", a, commands::train),
        Cmd::Classify(a) => execute("classify", a, commands::classify),
        Cmd::Anomaly(a) => execute("anomaly", a, commands::anomaly),
        Cmd::Embed(a) => execute("embed", a, commands::embed),
        Cmd::Gradcheck(a) => execute("gradcheck", a, commands::gradcheck),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qppl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
