use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("invalid layer state: {0}")]
    State(String),
    #[error("sequence of length {len} exceeds the maximum of {max}")]
    Sequence { len: usize, max: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training aborted at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
