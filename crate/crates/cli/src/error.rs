use magnet_core::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config or missing inputs.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] Error),

    #[error("{context}: {source}")]
    Output { context: String, source: std::io::Error },

    #[error("plot: {0}")]
    Plot(String),

    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::Numerical(_) | Error::NoConvergence { .. } => 1,
                Error::Io(io) if io.kind() != std::io::ErrorKind::NotFound => 1,
                _ => 2,
            },
            CliError::Output { .. } | CliError::Plot(_) | CliError::ChecksFailed(_) => 1,
        }
    }
}
