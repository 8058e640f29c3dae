//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter shapes do not agree.
    #[error("shape mismatch: {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    /// An operation was asked to produce or consume an empty extent.
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    /// A configuration value violates a module precondition.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Several configuration values are invalid; all are reported at once.
    #[error("invalid config:\n{}", .0.join("\n"))]
    InvalidConfigList(Vec<String>),

    /// A dataset violates its invariants.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// A training batch violates a sampler or loss precondition.
    #[error("batch error: {0}")]
    Batch(String),

    /// A non-finite value appeared where the trainer requires finiteness.
    #[error("non-finite {quantity} at iteration {iteration}")]
    NonFinite { iteration: usize, quantity: String },

    /// A checkpoint file is malformed, truncated, or corrupt.
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    /// An evaluation precondition failed (empty gallery, missing identity).
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Filesystem or image decoding failure, with the offending path.
    #[error("io error at {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl ToString, err: impl ToString) -> Self {
        Error::Io {
            path: path.to_string(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
