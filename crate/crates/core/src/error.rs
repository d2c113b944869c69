use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: geometry, parameters or configuration.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A Krylov solve did not reach its tolerance or broke down.
    #[error("{stage}: {message}")]
    Solver { stage: String, message: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn solver(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Solver {
            stage: stage.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefixes solver failures with the pipeline stage that produced them.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::Solver { stage: s, message } => Error::Solver {
                stage: format!("{stage}: {s}"),
                message,
            },
            Error::NonFinite(what) => Error::Solver {
                stage: stage.to_string(),
                message: format!("non-finite value encountered in {what}"),
            },
            Error::Invalid(m) => Error::Invalid(format!("{stage}: {m}")),
            other => other,
        }
    }

    /// True for input problems, false for numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Io { .. })
    }
}
