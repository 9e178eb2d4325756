use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("edge list {0} contains no edges")]
    EmptyEdgeList(PathBuf),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("charge parameter q = {0} outside [0, 0.25]; enable the unrestricted-q override to allow it")]
    ChargeOutOfRange(f64),

    #[error(
        "vertex {0} is isolated, so the normalized magnetic Laplacian is undefined; \
         use the renormalized propagation operator instead"
    )]
    IsolatedVertex(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("dense eigensolve capped at N = {cap}, graph has N = {n}; use lambda_max_estimate instead")]
    TooLargeForDense { n: usize, cap: usize },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    NoConvergence { iterations: usize, estimate: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
