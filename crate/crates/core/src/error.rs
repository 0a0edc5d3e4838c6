use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid annotation: {0}")]
    Validation(String),

    #[error("supervision: {0}")]
    Supervision(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("loss: {0}")]
    Loss(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("training diverged at step {step}: non-finite loss {value}")]
    Diverged { step: usize, value: f64 },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Parameter(_) => ErrorKind::Config,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Supervision(_)
            | Error::Input(_)
            | Error::Sampling(_)
            | Error::Format { .. }
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Image(_) => ErrorKind::Data,
            Error::Shape(_) | Error::Loss(_) | Error::Metric(_) | Error::Diverged { .. } => {
                ErrorKind::Runtime
            }
        }
    }
}
