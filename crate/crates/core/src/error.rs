//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("token not in vocabulary: {0:?}")]
    UnknownToken(String),

    #[error("vocabulary mismatch between corpora")]
    VocabMismatch,

    #[error("loss is not finite at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("gradient contains NaN in parameter block {0:?}")]
    NanGradient(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
