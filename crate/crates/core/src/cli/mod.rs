//! The `latent-logit` command line.

pub mod commands;
pub mod config;
pub mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;

pub const THREADS_ENV: &str = "LATENT_LOGIT_THREADS";

/// Process exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    InputError,
    /// The solver stopped at its iteration cap; outputs were still written.
    NotConverged,
    NumericalFailure,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::InputError => 2,
            Status::NotConverged => 3,
            Status::NumericalFailure => 4,
        }
    }

    pub fn of_error(e: &Error) -> Status {
        match e {
            Error::TooFewFolds { .. } => Status::NotConverged,
            e if e.is_numerical() => Status::NumericalFailure,
            _ => Status::InputError,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "latent-logit",
    version,
    about = "Multinomial logit with sparse homogeneous and low-rank heterogeneous effects"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one penalty pair; writes model.json, trace.csv and trace.json.
    Fit(FitArgs),
    /// Greedy search over the penalty grid; writes search.json, visited.csv and model.json.
    Search(SearchArgs),
    /// Predict classes for new rows; writes a label and one probability per class.
    Predict(PredictArgs),
    /// Cross-validated direct pseudo-elasticities; writes elasticity.csv and elasticity.json.
    Elasticity(ElasticityArgs),
    /// Generate a synthetic dataset; writes data.csv and truth.json.
    Gen(GenArgs),
    /// Time randomized against deterministic SVD; writes bench.csv.
    BenchSvd(BenchArgs),
}

/// Solver settings shared by the fitting commands.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Initial step size.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Plain proximal gradient instead of the accelerated solver.
    #[arg(long)]
    pub no_accelerate: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with default values for any of the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Neighbor count stored with the model.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Validation file; without it a seeded split of --data is used.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Explicit descending lambda1 grid (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub lambda1_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda2_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Override the neighbor count stored in the model.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ElasticityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioKind {
    GaussianLowRank,
    Clustered,
    Factorized,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioKind,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 5)]
    pub features: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Rank (gaussian-low-rank, factorized) or cluster count (clustered).
    #[arg(long, default_value_t = 2)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Within-cluster jitter radius.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    pub zero_row_fraction: f64,
    /// Standard-normal features instead of 0/1 dummies.
    #[arg(long)]
    pub gaussian_features: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 500)]
    pub rows: usize,
    #[arg(long, value_delimiter = ',', default_value = "1000,2500,5000")]
    pub cols: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "10,50")]
    pub k: Vec<usize>,
    /// Rank of the planted signal.
    #[arg(long, default_value_t = 20)]
    pub signal_rank: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
}

fn configure_threads() -> Result<(), String> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .parse()
            .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
        if n == 0 {
            return Err(format!("{THREADS_ENV} must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Parses the process arguments, runs the command and maps the outcome to
/// an exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(message) = configure_threads() {
        eprintln!("error: {message}");
        return ExitCode::from(Status::InputError.code());
    }
    let status = match commands::run(&cli.command) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            Status::of_error(&e)
        }
    };
    ExitCode::from(status.code())
}
