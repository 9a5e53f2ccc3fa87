//! Crate-wide error and result types.

/// Errors produced by model construction, fitting, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (bad knot request, non-positive rates, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Invalid or inconsistent input data.
    #[error("invalid data: {0}")]
    Data(String),

    /// A numerical procedure failed (divergence, degenerate denominator, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
