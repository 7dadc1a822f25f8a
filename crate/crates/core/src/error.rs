use std::path::PathBuf;

/// Errors produced by the toolkit.
///
/// The variants are grouped so a command-line front end can map them onto
/// distinct exit codes: bad arguments and bad data versus numerical fit
/// failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("state error: {0}")]
    State(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn fit(msg: impl Into<String>) -> Self {
        Error::Fit(msg.into())
    }

    pub(crate) fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Validation(_) => "validation",
            Error::Format { .. } => "format",
            Error::Fit(_) => "fit",
            Error::State(_) => "state",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
