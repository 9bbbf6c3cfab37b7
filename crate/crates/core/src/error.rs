use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rank-deficient input: pivot {pivot} at column {column} below tolerance")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("Jacobi SVD did not converge within {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("objective diverged at iteration {iteration}: {objective} exceeds {limit}")]
    DivergenceDetected {
        iteration: usize,
        objective: f64,
        limit: f64,
    },

    #[error("penalty grid is empty")]
    EmptyGrid,

    #[error("base probability {0} too small for elasticity")]
    ZeroBaseProbability(f64),

    #[error("every sample was excluded from the average")]
    AllExcluded,

    #[error("heterogeneity matrix is zero")]
    ZeroHeterogeneity,

    #[error("too few usable folds: {usable} (need at least 2)")]
    TooFewFolds { usable: usize },

    #[error("unsupported model format version {0}")]
    UnsupportedFormatVersion(u32),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. } | Error::ConvergenceFailure { .. } | Error::DivergenceDetected { .. }
        )
    }
}
