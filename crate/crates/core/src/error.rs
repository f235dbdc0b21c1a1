use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure kinds for checkpoint decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointErrorKind {
    BadMagic,
    VersionMismatch,
    Truncated,
    MalformedHeader,
    ShapeMismatch,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("parameter `{0}` not found")]
    MissingParam(String),

    #[error("no gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("non-deterministic function: baseline evaluations {0} and {1} differ")]
    NonDeterministic(f64, f64),

    #[error("non-finite value produced by op `{op}`")]
    NonFinite { op: String },

    #[error("dataset error at {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    #[error("image without mask: {0}")]
    MissingMask(String),

    #[error("failed to decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("checkpoint error ({kind:?}): {msg}")]
    Checkpoint { kind: CheckpointErrorKind, msg: String },

    #[error("evaluation requires at least one sample")]
    EmptyEvaluation,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { op, msg: msg.into() }
    }

    pub(crate) fn arg(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn checkpoint(kind: CheckpointErrorKind, msg: impl Into<String>) -> Self {
        Error::Checkpoint { kind, msg: msg.into() }
    }
}
