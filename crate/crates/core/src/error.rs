use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes: invalid
/// arguments, format and I/O problems exit 2, empty results exit 3 and
/// numerical failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("empty result: {0}")]
    EmptyResult(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Format(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::EmptyResult(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}
