//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("requested dense matrix of {rows}x{cols} exceeds the element cap {cap}")]
    AllocationCap { rows: usize, cols: usize, cap: usize },
    #[error("LAPACK routine {routine} failed with info={info}")]
    Lapack { routine: &'static str, info: i32 },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("dataset must contain both classes (got a single class)")]
    SingleClass,
    #[error("model schema version {found} unsupported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
