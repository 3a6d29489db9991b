//! Error types shared across the crate.
//!
//! Errors are grouped into three categories that map onto process exit
//! codes when surfaced through the command-line binary: configuration
//! problems (1), data problems (2), and numerical failures (3).

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: bad hyperparameter values, malformed run
    /// configs, unknown fields, contradictory flags.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid or unreadable data: parse failures, out-of-range indices,
    /// duplicate entries, I/O problems while reading or writing.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure: NaN/Inf in a place that cannot be recovered,
    /// domain violations in special functions, diverged optimization.
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl Error {
    /// Exit code used by the CLI for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) => 2,
            Error::Numerical(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// I/O failure while touching `path`, categorized as a data error.
    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Data(format!("{}: {}", path.display(), err))
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
