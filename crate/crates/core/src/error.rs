use std::path::PathBuf;

/// Errors raised by the alignment engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation received arguments that violate its contract.
    #[error("invalid input: {0}")]
    Input(String),
    /// A training step produced a non-finite quantity and was aborted.
    #[error("training error: {0}")]
    Training(String),
    /// A metric is not defined for the supplied data.
    #[error("undefined result: {0}")]
    Undefined(String),
    /// Filesystem failure, tagged with the offending path.
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A persisted artifact could not be decoded.
    #[error("malformed {what} at {}:{line}: {msg}", path.display())]
    Malformed {
        what: &'static str,
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Training(_) => "training",
            Error::Undefined(_) => "undefined",
            Error::Io { .. } => "io",
            Error::Malformed { .. } => "malformed",
        }
    }
}
