use thiserror::Error;

/// Errors raised by the approximation, sampling and data-loading routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("unsupported dimension {dim} (maximum {max})")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("non-finite objective value at coordinate {coordinate}")]
    NonFiniteStencil { coordinate: usize },

    #[error("solver did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("no initial mode: none of {0} starting values yielded a negative definite Hessian")]
    NoInitialMode(usize),

    #[error("undefined diagnostic: {0}")]
    UndefinedDiagnostic(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
