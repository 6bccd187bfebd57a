use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent data.
    #[error("data error: {0}")]
    Data(String),

    /// A CSV row failed to parse or validate.
    #[error("{path}: line {line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// A subgroup (or class) needed by an operation has no samples.
    #[error("subgroup (y={class}, b={group}) is empty")]
    EmptySubgroup { class: usize, group: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    /// Loss became non-finite or exceeded the divergence guard.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    /// The mimicking verifier rejected a label view.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Divergence { .. } => 4,
            Error::Data(_)
            | Error::Row { .. }
            | Error::EmptySubgroup { .. }
            | Error::EmptyClass(_)
            | Error::Verification(_)
            | Error::Dimension { .. }
            | Error::Json(_) => 3,
            Error::Io { .. } => 3,
        }
    }
}
