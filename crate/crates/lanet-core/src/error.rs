//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by scene ingestion, model configuration, and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A scene file failed to parse.
    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    /// A scene file parsed but violated the schema or a type invariant.
    #[error("schema violation in {path}: {detail}")]
    Schema { path: PathBuf, detail: String },

    /// Filesystem failure, annotated with the offending path.
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A checkpoint was built under a different architecture configuration.
    #[error("checkpoint/config mismatch: {0}")]
    CheckpointMismatch(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
