use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum DpiError {
    /// Invalid configuration or mismatched shapes at an API boundary.
    #[error("configuration error: {0}")]
    Config(String),
    /// A non-finite value appeared during a forward pass or loss evaluation.
    #[error("numeric error in {location}: {detail}")]
    Numeric { location: String, detail: String },
    /// An operation was called out of order or with invalid arguments.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
}

impl DpiError {
    pub fn config(msg: impl Into<String>) -> Self {
        DpiError::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        DpiError::Usage(msg.into())
    }

    pub fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        DpiError::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DpiError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            DpiError::Numeric { .. } => 3,
            DpiError::Config(_) | DpiError::Serde(_) => 2,
            DpiError::Usage(_) | DpiError::Io { .. } => 1,
        }
    }
}

pub type Result<T, E = DpiError> = std::result::Result<T, E>;
