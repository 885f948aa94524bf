use thiserror::Error;

/// Errors produced by the estimation, testing and selection routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("optimizer did not converge: {0}")]
    Convergence(String),
    #[error("shape estimate {xi} outside tabulated range [{lo}, {hi}]")]
    OutOfTableRange { xi: f64, lo: f64, hi: f64 },
    #[error("null table: {0}")]
    NullTable(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
