use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code classes:
/// `Argument` is a usage problem, `Io`/`Format` are data problems,
/// `Checkpoint` is a checkpoint problem. `Dimension` and `Vocabulary`
/// indicate inconsistent shapes or indices and usually mean a bug or a
/// mismatched artifact.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn vocabulary(msg: impl Into<String>) -> Self {
        Error::Vocabulary(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }
}
