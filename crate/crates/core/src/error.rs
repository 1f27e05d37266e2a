use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed binary or text input. `offset` is the byte offset at which
    /// decoding failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("config: unknown key `{key}` on line {line}")]
    UnknownKey { key: String, line: usize },

    #[error("config: missing required key(s): {}", .0.join(", "))]
    MissingKeys(Vec<String>),

    #[error("training diverged at epoch {epoch}, step {step} (loss = {loss}); config: {config}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
        config: String,
    },

    #[error("linear program failed: {0}")]
    Solver(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Parse { .. } => "parse",
            Error::Config { .. } | Error::UnknownKey { .. } | Error::MissingKeys(_) => "config",
            Error::Diverged { .. } => "diverged",
            Error::Solver(_) => "solver",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
