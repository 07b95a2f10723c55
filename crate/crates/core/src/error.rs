use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("empty dataset after {0}")]
    EmptyDataset(&'static str),
    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Usage/configuration errors as opposed to runtime failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Config(_) | Error::IndexOutOfRange { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
