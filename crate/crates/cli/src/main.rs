//! `biasprop`: validate corpora, generate synthetic fixtures, and run
//! propagation experiments, suites and engine-versus-oracle checks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "biasprop",
    version,
    about = "Measure intrinsic-to-extrinsic bias propagation in shared embedding spaces"
)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check corpus files (manifest + matrix) for format errors.
    Validate {
        /// Manifest path, with or without the `.json` extension.
        #[arg(required = true)]
        corpora: Vec<PathBuf>,
    },
    /// Write a planted-signal synthetic model and a run config for it.
    Synth {
        /// Fixture parameters; the built-in defaults when omitted.
        params: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Intrinsic association scores only.
    Sceat(RunArgs),
    /// Run one experiment.
    Run(RunArgs),
    /// Run many experiments over every model and aggregate rho.
    Suite(RunArgs),
    /// Compare the engine against the independent reference implementation.
    OracleCheck(RunArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["config", "synth_default"])))]
pub struct RunArgs {
    /// Run configuration file.
    config: Option<PathBuf>,
    /// Use the built-in synthetic model instead of a config file.
    #[arg(long)]
    synth_default: bool,
    /// Preset name, or `all` / `all-small`.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Experiment spec file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Seed for every random draw, overriding config and spec seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report files.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command, cli.jobs) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
