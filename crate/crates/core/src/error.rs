use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not conform for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A model, dataset, schedule or training configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-supplied argument is outside its domain.
    #[error("input error: {0}")]
    Input(String),

    /// A value lies outside the allowed range or grid.
    #[error("range error: {0}")]
    Range(String),

    /// A file could not be decoded.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: {message}")]
    Training {
        epoch: usize,
        step: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
