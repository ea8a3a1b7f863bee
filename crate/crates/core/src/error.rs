use thiserror::Error;

pub type Result<T> = std::result::Result<T, DteError>;

#[derive(Debug, Error)]
pub enum DteError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DteError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        DteError::Validation(msg.into())
    }
}
