//! CLI error classes and their process exit codes.

use covreg::CovRegError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, values or missing inputs (exit code 2).
    #[error("{0}")]
    Usage(String),
    /// Unreadable or malformed input, or data the method cannot use (exit code 3).
    #[error("{0}")]
    Data(String),
    /// Factorization or sampler failure (exit code 4).
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<CovRegError> for CliError {
    fn from(e: CovRegError) -> Self {
        match e {
            CovRegError::Argument(_) => CliError::Usage(e.to_string()),
            CovRegError::NotPositiveDefinite { .. } | CovRegError::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
