use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },

    #[error("cross-fusion add for {entry} failed: {left} vs {right}")]
    CrossFusion {
        entry: String,
        left: Shape,
        right: Shape,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("{path}: {msg} at byte {offset}")]
    Format {
        path: String,
        offset: usize,
        msg: String,
    },

    #[error("{path}: unsupported PNM variant {magic}")]
    UnsupportedVariant { path: String, magic: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable class name, used by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::CrossFusion { .. } => "cross_fusion",
            Error::Config(_) => "config",
            Error::Invalid(_) => "invalid",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Format { .. } | Error::UnsupportedVariant { .. } => "format",
            Error::MissingFile(_) => "missing_file",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
