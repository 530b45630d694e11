use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

#[derive(Parser)]
#[command(name = "prwlab", version, about = "Iterated perturbed random walks on branching trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if absent.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "PRWLAB_WORKERS")]
    pub workers: Option<usize>,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generation counts N_j(t) per replica.
    Simulate(Common),
    /// Grid tables of U, V and V_j plus bound constants.
    Numerics(Common),
    /// Samples of the limit functional.
    Limit(Common),
    /// Monte Carlo comparison of normalized counts with the limit.
    Fdd(Common),
    /// Built-in checks with known answers.
    Selfcheck {
        /// Only the fast exact checks.
        #[arg(long)]
        quick: bool,
        #[arg(long, env = "PRWLAB_WORKERS")]
        workers: Option<usize>,
    },
}

/// Failure classes mapped to exit codes.
pub enum Failure {
    Validation(anyhow::Error),
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Validation(e)
    }
}

impl From<prwlab::Error> for Failure {
    fn from(e: prwlab::Error) -> Self {
        Failure::Validation(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Numerics(c) => commands::numerics(&c),
        Command::Limit(c) => commands::limit(&c),
        Command::Fdd(c) => commands::fdd(&c),
        Command::Selfcheck { quick, workers } => commands::selfcheck(quick, workers),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("selfcheck failed: {msg}");
            ExitCode::from(2)
        }
    }
}
