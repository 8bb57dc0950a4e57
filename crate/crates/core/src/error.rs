use thiserror::Error;

use crate::distributions::OutcomeSpace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("outcome space mismatch: expected {expected}, found {found}")]
    SpaceMismatch {
        expected: OutcomeSpace,
        found: OutcomeSpace,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid outcome space: {0}")]
    InvalidSpace(String),

    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("pool has no components")]
    EmptyPool,

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A quantity that is nonnegative (or zero) in exact arithmetic came out
    /// beyond floating-point noise. Indicates a bug, not bad input.
    #[error("internal consistency violated: {what} = {value:e}")]
    Consistency { what: String, value: f64 },
}

impl Error {
    pub fn is_consistency(&self) -> bool {
        matches!(self, Error::Consistency { .. })
    }
}
