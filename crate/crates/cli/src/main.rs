//! `sivstark`: field solve, spectrum simulation, fitting and frequency
//! matching driven by one TOML config.
//!
//! Exit codes: 0 success, 1 invalid config or input, 2 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Numerical, Run};

#[derive(Parser)]
#[command(name = "sivstark", version, about = "Stark tuning of SiV- emitters")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `output.dir` from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the electrode field; write the line cut and the probe report.
    Field,
    /// Simulate one PLE scan per configured voltage.
    Simulate,
    /// Fit every spectrum and the Stark parabola through the centres.
    Fit {
        /// Spectra to fit (default: `<out>/spectra`).
        #[arg(long)]
        spectra: Option<PathBuf>,
    },
    /// Choose per-emitter voltages that bring an ensemble to one frequency.
    Match {
        /// Cross-check against the exhaustive grid search (at most 5 emitters).
        #[arg(long)]
        oracle: bool,
    },
    /// Collect the outputs found under the output directory into one summary.
    Report,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let loaded = match &cli.config {
        Some(path) => config::load(path)?,
        None => config::parse("")?,
    };
    let run = Run::new(loaded, cli.seed, cli.out);
    match cli.command {
        Command::Field => commands::field(&run),
        Command::Simulate => commands::simulate(&run),
        Command::Fit { spectra } => commands::fit(&run, spectra),
        Command::Match { oracle } => commands::match_cmd(&run, oracle),
        Command::Report => commands::report(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Numerical>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
