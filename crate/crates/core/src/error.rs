use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not PSD: min eigenvalue {min_eigenvalue:e} below -{tolerance:e}")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("trajectory diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("component {index} blows up at t = {time} (requested t = {requested})")]
    BlowUp { index: usize, time: f64, requested: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("infeasible: final loss {loss:e} above tolerance {tolerance:e}")]
    Infeasible { loss: f64, tolerance: f64 },

    #[error("no escape direction: top eigenvalue {0:e} is not positive")]
    NoEscape(f64),

    #[error("initial vector has no overlap with the top eigenvector")]
    NoAlignment,

    #[error("spectrum classification mismatch: {0}")]
    ClassificationMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
