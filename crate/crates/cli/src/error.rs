use thiserror::Error;

/// Failure of a subcommand, carrying the process exit code contract:
/// 1 for divergence, 2 for usage or input errors.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] neural_velocimetry::Error),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("cannot write manifest: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Diverged(_) | CliError::Core(neural_velocimetry::Error::Diverged(_)) => 1,
            _ => 2,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
