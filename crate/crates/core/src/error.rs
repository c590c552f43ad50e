//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A model parameter is outside its domain (e.g. sigma not in (0,1)).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A configuration value is unusable (e.g. negative smoothing parameter).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An argument is outside the domain of an operation (e.g. minute out of range).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure (non-convergence, singular information matrix, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
