use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing artifact `{artifact}`; produce it with `splash {producer}`")]
    MissingArtifact { artifact: String, producer: &'static str },

    #[error("artifact `{artifact}` was produced under config {found}, expected {expected} (pass --force to mix)")]
    ConfigMismatch {
        artifact: String,
        found: String,
        expected: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
