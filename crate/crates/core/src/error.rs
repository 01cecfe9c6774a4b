use std::path::PathBuf;

/// Errors surfaced by dataset I/O, configuration, training, and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u16, found: u16 },

    #[error("truncated or corrupt record: {0}")]
    CorruptRecord(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("route derivation failed: {0}")]
    RouteDerivation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("{0}")]
    Mismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
