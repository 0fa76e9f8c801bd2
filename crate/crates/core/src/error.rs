use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration value failed validation. `path` is the dotted key path.
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("stream `{stream}` is not sorted at index {index}")]
    Unsorted { stream: &'static str, index: usize },

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("malformed input at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn arg(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
