use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{0} is not a probability in the open interval (0, 1)")]
    Probability(f64),

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("policy violates causality: {0}")]
    NonCausal(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid problem: {0}")]
    Problem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn dim_err(what: impl Into<String>) -> Error {
    Error::Dimension(what.into())
}
