//! `nanobatch` command line: `run`, `sweep`, and `account`.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on an invalid
//! configuration or invalid arguments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nanobatch::config::ExperimentConfig;
use nanobatch::experiment::{self, ACCOUNT_HEADER};
use nanobatch::Error;

#[derive(Parser)]
#[command(name = "nanobatch", version, about = "Differentially private SGD at micro-batch size 1")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write `<run_id>.csv` and `<run_id>.params`.
    Run { config: PathBuf },
    /// Train every point of the configured grid and write a frontier CSV.
    Sweep { config: PathBuf },
    /// Print `q,T,epsilon,best_order` for a training schedule.
    Account {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        batch: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        epochs: u64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        /// Print the column header first.
        #[arg(long)]
        header: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// A config file that cannot be read is an operator error, like one that
/// cannot be parsed.
fn load(path: &Path) -> nanobatch::Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).map_err(|e| match e {
        Error::Io { .. } => Error::config("config", e.to_string()),
        other => other,
    })
}

fn execute(command: Command) -> nanobatch::Result<()> {
    match command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            let summary = experiment::run(&cfg)?;
            println!("{}", summary.summary_line());
        }
        Command::Sweep { config } => {
            let cfg = load(&config)?;
            let summary = experiment::sweep(&cfg)?;
            let failed = summary.points.iter().filter(|p| p.outcome.is_err()).count();
            for p in &summary.points {
                match &p.outcome {
                    Ok(s) => println!("point {}: {}", p.index, s.summary_line()),
                    Err(msg) => println!("point {}: failed: {msg}", p.index),
                }
            }
            println!(
                "sweep {}: {} points, {failed} failed, frontier={}",
                cfg.run_id,
                summary.points.len(),
                summary.frontier_path.display()
            );
        }
        Command::Account {
            n,
            batch,
            sigma,
            epochs,
            delta,
            header,
        } => {
            let report = experiment::account(n, batch, sigma, epochs, delta)?;
            if header {
                println!("{ACCOUNT_HEADER}");
            }
            println!("{}", experiment::account_row(&report));
        }
    }
    Ok(())
}
