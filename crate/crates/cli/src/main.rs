use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

mod output;
mod run;

#[derive(Debug, Parser)]
#[command(name = "flexmarket", version, about = "Chance-constrained dispatch and flexibility-market clearing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clear one case and write set-points, acceptances and prices.
    Solve(SolveArgs),
    /// Clear a case over a grid of reward coefficients.
    Sweep(SweepArgs),
    /// Monte Carlo violation check of a solved case.
    Validate(ValidateArgs),
}

/// Case selection and model overrides shared by every command.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Embedded case name (sixbus, ninebus) or path to a case document.
    #[arg(long)]
    pub case: String,
    /// Ignore the aggregator bids.
    #[arg(long)]
    #[serde(default)]
    pub no_bids: bool,
    /// Drop the wind covariance.
    #[arg(long)]
    #[serde(default)]
    pub deterministic: bool,
    #[arg(long)]
    pub eps_gen: Option<f64>,
    #[arg(long)]
    pub eps_line: Option<f64>,
    #[arg(long)]
    pub eps_power: Option<f64>,
    #[arg(long)]
    pub eps_energy: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "FLEXMARKET_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Multi-period clearing with bids.
    Clearing,
    /// Single-period dispatch without bids.
    Cedp,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "clearing")]
    pub mode: Mode,
    /// Period for `--mode cedp` (1-based); defaults to the peak-load period.
    #[arg(long)]
    pub period: Option<usize>,
    /// Reward coefficient for power flexibility, applied to every bid.
    #[arg(long)]
    pub gamma_p: Option<f64>,
    /// Reward coefficient for energy flexibility, applied to every bid.
    #[arg(long)]
    pub gamma_e: Option<f64>,
    /// Also write the conic program in text form.
    #[arg(long)]
    pub dump: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Grid as `start:end:count` or a comma-separated list.
    #[arg(long, default_value = "110:910:5")]
    pub gamma_p: String,
    #[arg(long, default_value = "100:2500:5")]
    pub gamma_e: String,
    /// Parallel solves (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Directory written by `solve`.
    #[arg(long)]
    pub solution: PathBuf,
    /// Override the case recorded in the solution manifest.
    #[arg(long)]
    pub case: Option<String>,
    /// Comma-separated families.
    #[arg(long, default_value = "laplace,logistic,normal,uniform,weibull")]
    pub families: String,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 2019)]
    pub seed: u64,
    /// `peak`, `all` or a comma-separated list of 1-based periods.
    #[arg(long, default_value = "peak")]
    pub periods: String,
    /// `max` (worst unit per class) or `per-line`.
    #[arg(long, default_value = "max")]
    pub aggregate: String,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => run::solve(&a),
        Command::Sweep(a) => run::sweep(&a),
        Command::Validate(a) => run::validate(&a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
