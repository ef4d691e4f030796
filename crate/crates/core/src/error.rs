use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("bayer pattern error: {0}")]
    Pattern(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checksum mismatch in {path}: expected {expected}, found {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("non-finite loss at step {step} of stage {stage}: {detail}")]
    NonFinite {
        stage: String,
        step: usize,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Serde(_) => 2,
            Error::Dimension(_) | Error::Pattern(_) => 3,
            Error::Data(_) | Error::Checksum { .. } | Error::NonFinite { .. } => 4,
            Error::Io { .. } | Error::Image { .. } => 5,
        }
    }
}

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
