use std::io;
use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// Bad magic, unsupported version, truncated payload or a malformed text line.
    #[error("{path}: format error: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Data {
        path: PathBuf,
        #[source]
        source: gazediff_core::Error,
    },
    #[error(transparent)]
    Core(#[from] gazediff_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn data(path: impl AsRef<Path>, source: gazediff_core::Error) -> Self {
        Error::Data {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn csv(path: impl AsRef<Path>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}
