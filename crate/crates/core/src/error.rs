use thiserror::Error;

use crate::data::Violation;

#[derive(Debug, Error)]
pub enum MlarError {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },

    #[error("dataset failed validation ({} violations)", .0.len())]
    InvalidData(Vec<Violation>),

    #[error("input error at line {line}: {msg}")]
    Input { line: usize, msg: String },

    #[error("incomplete panel: {0}")]
    IncompletePanel(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl MlarError {
    /// True for failures caused by the numerics rather than by user input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, MlarError::Numerical(_) | MlarError::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, MlarError>;
