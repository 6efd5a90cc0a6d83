//! `gradsurgeon` command-line interface.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! abort during training, 3 gradient check above tolerance.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gradsurgeon", version, about = "Gradient surgery experiments on feature encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark as record files.
    GenData(Common),
    /// Train one run and write history, report, metrics and checkpoint.
    Train(Common),
    /// Evaluate a checkpoint.
    Eval(Common),
    /// Run the finite-difference gradient checks.
    Gradcheck(Common),
    /// Every surgery mode over several seeds.
    Ablate(Multi),
    /// Alignment weights 0, 0.05, 0.1, 0.2, 0.5 over several seeds.
    Sweep(Multi),
    /// Write 2D projections of student and teacher features as CSV.
    ExportPlots(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Record file or directory; synthetic data is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write (`train`) or read (`eval`, `export-plots`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Multi {
    #[command(flatten)]
    pub common: Common,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::GenData(c) => commands::gen_data(c),
        Command::Train(c) => commands::train(c),
        Command::Eval(c) => commands::eval(c),
        Command::Gradcheck(c) => commands::gradcheck(c),
        Command::Ablate(m) => commands::ablate(m),
        Command::Sweep(m) => commands::sweep(m),
        Command::ExportPlots(c) => commands::export_plots(c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<gradsurgeon::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}
