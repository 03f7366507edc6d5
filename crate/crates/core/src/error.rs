use std::path::PathBuf;

/// Error families. Each maps to a distinct CLI exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("capacity: {0}")]
    Capacity(String),

    #[error("encoding infeasible: {reason} (bits {bits:?})")]
    Infeasible { reason: String, bits: Vec<usize> },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error family.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::SchemaMismatch(_) | Error::Json(_) => 2,
            Error::Csv(e) if !e.is_io_error() => 2,
            Error::Capacity(_) => 3,
            Error::Infeasible { .. } => 4,
            Error::Io { .. } | Error::Csv(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
