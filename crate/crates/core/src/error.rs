//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A text annotation or landmark file violated its format.
    #[error("format error in {path} (line {line}): {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Duplicate or out-of-order frame while indexing a dataset.
    #[error("index error: {0}")]
    Index(String),

    /// Tensor or series dimensions do not agree.
    #[error("shape error: {0}")]
    Shape(String),

    /// A histogram row has no mass, so nothing can be sampled or normalized.
    #[error("empty distribution: {0}")]
    EmptyDistribution(String),

    /// Degenerate geometric configuration (e.g. coincident source points).
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// Frame index outside the video.
    #[error("frame {frame} out of range for video of {len} frames")]
    FrameOutOfRange { frame: usize, len: usize },

    /// Configuration value rejected before any work started.
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage failed; wraps the underlying error with context.
    #[error("stage '{stage}' failed on {subject}: {source}")]
    Stage {
        stage: &'static str,
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach pipeline stage context to an error.
    pub fn in_stage(self, stage: &'static str, subject: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            subject: subject.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
