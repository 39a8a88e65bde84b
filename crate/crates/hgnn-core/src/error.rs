//! Error type shared across the engine.

use thiserror::Error;

/// All failures surfaced by the library.
///
/// The variants map onto the CLI exit codes: configuration/usage problems
/// exit with 1, data problems with 2, numerical failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, hyperparameter, or argument.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values or other numerical breakdown.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
