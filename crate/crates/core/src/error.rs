use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("{op} requires even spatial dims, got {height}x{width}")]
    OddSpatial {
        op: &'static str,
        height: usize,
        width: usize,
    },

    #[error("backward called on an empty tape (no forward pass recorded)")]
    EmptyTape,

    #[error("invalid genome: {0}")]
    InvalidGenome(String),

    #[error("invalid bundle: {0}")]
    InvalidBundle(String),

    #[error("shape chain breaks at {position}: {reason}")]
    ShapeChain { position: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unfolded batch norm at graph layer {0}; fold before quantizing")]
    UnfoldedBatchNorm(usize),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: impl std::fmt::Debug, right: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            op,
            left: format!("{left:?}"),
            right: format!("{right:?}"),
        }
    }
}
