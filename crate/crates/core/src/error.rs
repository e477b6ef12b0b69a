use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("record {record}: label {label} outside [0, {classes})")]
    LabelRange {
        record: usize,
        label: usize,
        classes: usize,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint config mismatch:\n  {}", .0.join("\n  "))]
    ConfigMismatch(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
