use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("metadata error: {0}")]
    Metadata(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerics error: {message} (last good checkpoint: {last_good:?})")]
    Numerics { message: String, last_good: Option<PathBuf> },
    #[error("histogram spec mismatch: {0}")]
    Spec(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("patch is not flat: {0}")]
    Flatness(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn numerics(message: impl Into<String>) -> Self {
        Error::Numerics { message: message.into(), last_good: None }
    }

    /// Errors caused by bad configuration or input, as opposed to failures
    /// that happen while computing.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Numerics { .. })
    }
}
