use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid shapes, dimensions or configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called out of order or with arguments outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// Optimisation produced non-finite values or diverged.
    #[error("training error: {0}")]
    Training(String),

    /// Procedural generation could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// A file did not match its declared schema.
    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Training(_) => "training",
            Error::Generation(_) => "generation",
            Error::Schema { .. } => "schema",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: &std::path::Path, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}
