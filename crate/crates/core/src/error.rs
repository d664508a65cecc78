//! Error type shared by all modules.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by indexing, mining, training, and evaluation.
#[derive(Debug, Error)]
pub enum EfrError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate id {id:?} at line {line} in {path}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown entity source {0:?}")]
    UnknownSource(String),

    #[error("unknown {what} id {id:?}")]
    UnknownId { what: &'static str, id: String },

    #[error("{0}")]
    Invalid(String),

    #[error("training aborted at step {step}: {msg}")]
    NonFinite { step: usize, msg: String },
}

impl EfrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EfrError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config values, missing
    /// input files) as opposed to internal failures. The CLI maps these
    /// to exit code 2.
    pub fn is_usage(&self) -> bool {
        match self {
            EfrError::Config(_) | EfrError::UnknownSource(_) => true,
            EfrError::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, EfrError>;
