//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("video {0} contains no frames")]
    EmptyVideo(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("need at least 2 frames to score motion, got {0}")]
    TooFewFrames(usize),

    #[error("feature file format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("embedder error: {0}")]
    Embedder(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("threshold selection failed: {0}")]
    Threshold(String),

    #[error("fold assignment failed: {0}")]
    Fold(String),

    #[error("could not stratify folds: {0}")]
    Stratification(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("cannot slice video {video_id}: {message}")]
    Slicing { video_id: String, message: String },

    #[error("split failed: {0}")]
    Split(String),

    #[error("representative sampling failed: {0}")]
    Sampling(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the stage or item that produced it.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Context { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
