use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed RF32 / PLBL / model / params file.
    #[error("{0}")]
    Format(String),

    /// Arguments that violate an operation's preconditions.
    #[error("{0}")]
    Invalid(String),

    /// Consolidated configuration problems, reported before any work starts.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failure at runtime.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid(_) | Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            Error::Io { .. } | Error::Format(_) => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::Invalid(format!($($arg)*))
    };
}

macro_rules! format_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Format(format!($($arg)*))
    };
}

pub(crate) use format_err;
pub(crate) use invalid;
