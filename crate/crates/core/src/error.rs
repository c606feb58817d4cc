use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("value range mismatch: {0}")]
    Range(String),
    #[error("invalid value: {0}")]
    Validation(String),
    #[error("wrong modality: {0}")]
    Modality(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("projection error: {0}")]
    Projection(String),
    #[error("tile fetch failed after {attempts} attempt(s): {message}")]
    Fetch { attempts: u32, message: String },
    #[error("missing tile {0}")]
    MissingTile(String),
    #[error("integrity check failed for {path}: {message}")]
    Integrity { path: PathBuf, message: String },
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] sareo_nn::NnError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Nn(_) => 2,
            Error::Dimension(_)
            | Error::Range(_)
            | Error::Validation(_)
            | Error::Modality(_)
            | Error::EmptyCorpus(_)
            | Error::Projection(_)
            | Error::MissingTile(_)
            | Error::Integrity { .. }
            | Error::Format { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Io { .. } | Error::Fetch { .. } => 5,
        }
    }
}
