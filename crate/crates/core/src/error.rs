use crate::ringbuf::RingError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence overrun: network expects {expected} samples, reset before reuse")]
    SequenceOverrun { expected: usize },
    #[error("incomplete sequence: {seen} of {expected} samples seen")]
    IncompleteSequence { seen: usize, expected: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("empty trace: no streaming intervals to summarize")]
    EmptyTrace,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
