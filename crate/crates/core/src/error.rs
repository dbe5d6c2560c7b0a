use thiserror::Error;

/// Errors produced across the surrogate toolkit.
#[derive(Error, Debug)]
pub enum SurrogateError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solver failed: {0}")]
    SolverFailure(String),

    #[error("eigensolver did not converge: {0}")]
    EigenFailure(String),

    #[error("index set weight log(a + {j}*b) = {weight} is not positive; the set would be unbounded")]
    UnboundedIndexSet { j: usize, weight: f64 },

    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    #[error("missing jacobians: {0}")]
    MissingJacobians(String),

    #[error("zero reference norm in error metric")]
    ZeroDenominator,

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SurrogateError>;
