//! Command-line front end: simulate data, fit both model components, forecast, interpret and
//! check convergence. Every figure-style output is a tidy CSV or JSON file in `--out`.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Outcome;
use settings::{RunArgs, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "cohort-ledger", version, about = "Cohort retention and revenue forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort table and its generator settings.
    Simulate,
    /// Fit retention and revenue on rows up to the cutoff.
    Fit,
    /// Forecast a grid of cells (or every cell of --input) and score coverage against --input.
    Predict {
        /// CSV with columns cohort, period, n_users.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Also write every predictive draw.
        #[arg(long)]
        export_draws: bool,
    },
    /// Partial dependence, ICE curves and variable importance for the retention model.
    Interpret,
    /// Recompute convergence diagnostics and, with --input, posterior predictive checks.
    Diagnose,
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let cfg = RunConfig::resolve(&cli.run)?;
    match &cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Predict { grid, export_draws } => commands::predict(&cfg, grid.as_deref(), *export_draws),
        Command::Interpret => commands::interpret(&cfg),
        Command::Diagnose => commands::diagnose(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::GateFailed(reason)) => {
            eprintln!("warning: {reason}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
