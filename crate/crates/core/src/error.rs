use crate::tensor::TensorError;

/// Crate-level error. [`Error::exit_code`] maps each kind to the CLI's exit status.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 2 for data/config problems, 3 for numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. } | Error::Tensor(TensorError::NonFinite { .. }) => 3,
            _ => 2,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(TensorError::NonFinite { .. }) | Error::NonFiniteLoss { .. } => "numeric",
            Error::Tensor(_) => "tensor",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
        }
    }
}
