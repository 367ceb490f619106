use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] msp_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed records: {0}")]
    Parse(String),
}

impl RunError {
    pub fn config(msg: impl Into<String>) -> Self {
        RunError::Config(msg.into())
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) => 1,
            RunError::Parse(_) => 2,
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            RunError::Io(e.to_string())
        } else {
            RunError::Parse(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;
