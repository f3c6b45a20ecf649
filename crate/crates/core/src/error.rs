use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("phantom generation failed: {0}")]
    Phantom(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("cascade starved of positives at stage {stage}")]
    CascadeStarved { stage: usize },

    #[error("feature schema mismatch: model expects {expected}, got {actual}")]
    SchemaMismatch { expected: String, actual: String },

    #[error("stage `{stage}` failed for case `{case_id}`: {source}")]
    Stage {
        stage: String,
        case_id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Wraps an error with the pipeline stage and case it came from.
    pub fn in_stage(self, stage: &str, case_id: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage: stage.to_string(),
                case_id: case_id.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// True for errors caused by bad input data rather than a failing stage.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Data { .. } | Error::Io { .. } | Error::DimensionMismatch { .. } => true,
            Error::Stage { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}
