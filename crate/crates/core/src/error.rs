use std::path::PathBuf;

use crate::tensor_io::TensorIoError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid clip length {0}: frame count must satisfy T % 4 == 1")]
    InvalidClipLength(usize),

    #[error("empty subject frame at index {0}")]
    EmptySubjectFrame(usize),

    #[error("frame index {index} out of range for a clip of {frames} frames")]
    FrameIndex { index: usize, frames: usize },

    #[error("no subject: mask is empty in every frame")]
    NoSubject,

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("degenerate reference image: {0}")]
    DegenerateReference(String),

    #[error("weights are untrained or missing")]
    Untrained,

    #[error(transparent)]
    Tensor(#[from] TensorIoError),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, used by the CLI's JSON error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidClipLength(_) => "invalid_clip_length",
            Error::EmptySubjectFrame(_) => "empty_subject_frame",
            Error::FrameIndex { .. } => "frame_index",
            Error::NoSubject => "no_subject",
            Error::InvalidValue(_) => "invalid_value",
            Error::Config(_) => "config",
            Error::DegenerateReference(_) => "degenerate_reference",
            Error::Untrained => "untrained",
            Error::Tensor(e) => e.code(),
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
