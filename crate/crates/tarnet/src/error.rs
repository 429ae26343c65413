//! Error type shared across the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are inconsistent (matrix/tensor dimensions, design sizes).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A NaN or infinity where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A numerical routine failed (no convergence, singular input, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Recursive generation left the stable range.
    #[error("generation diverged: {0}")]
    Diverged(String),

    /// Text input (CSV, config) could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A structured file is well-formed but violates the declared schema.
    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
