use thiserror::Error;

/// Errors raised by the covariance-regression library.
#[derive(Debug, Error)]
pub enum CovRegError {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Cholesky failed even after the full jitter escalation.
    #[error("matrix is not positive definite (jitter {jitter:e}, pivot {pivot} = {value:e})")]
    NotPositiveDefinite { jitter: f64, pivot: usize, value: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, CovRegError>;

pub(crate) fn argument(msg: impl Into<String>) -> CovRegError {
    CovRegError::Argument(msg.into())
}
