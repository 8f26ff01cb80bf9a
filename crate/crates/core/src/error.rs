use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// |H'| exceeded the range of the transduction function.
    #[error("no real displacement for normalized signal {0} (|H'| must not exceed 0.5)")]
    NoRealSolution(f64),

    #[error("insufficient coverage: {0}")]
    Coverage(String),

    #[error("fit failed after {iterations} iterations: {reason} (chi2 = {chi2:.4e})")]
    FitFailure {
        reason: String,
        iterations: usize,
        chi2: f64,
    },

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("post-selection kept no samples")]
    EmptySelection,

    #[error("statistical shortfall: {0}")]
    Shortfall(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Shortfall(_) | Error::EmptySelection | Error::Statistics(_) => 3,
            Error::FitFailure { .. } => 4,
            _ => 1,
        }
    }
}
