use surrogate_core::SurrogateError;
use thiserror::Error;

/// Failure classes with their process exit codes.
#[derive(Error, Debug)]
pub enum CliError {
    /// Bad arguments; carries the usage text.
    #[error("{0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl From<SurrogateError> for CliError {
    /// Rejected parameter values trace back to the configuration; everything
    /// else happened while running.
    fn from(e: SurrogateError) -> Self {
        match e {
            SurrogateError::InvalidArgument(_) | SurrogateError::UnboundedIndexSet { .. } => {
                Self::Config(e.to_string())
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(format!("I/O error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(format!("JSON error: {e}"))
    }
}
