use std::path::PathBuf;

/// Errors produced across the compression pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("sequence of length {len} exceeds maximum {max}")]
    LengthOverflow { len: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rate mismatch: projection built for rate {built}, requested {requested}")]
    RateMismatch { built: usize, requested: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("id `{0}` not found")]
    NotFound(String),

    #[error("corrupt file at byte offset {offset}: {msg}")]
    Corrupt { offset: u64, msg: String },

    #[error("model fingerprint mismatch: index built by {index}, active checkpoint is {active}")]
    FingerprintMismatch { index: String, active: String },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
