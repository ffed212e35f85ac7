use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the segmentation and evaluation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported image format: {0}")]
    Format(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid image data: {0}")]
    InvalidImage(String),

    /// A rate (DR, RA, ...) was requested over an empty population.
    #[error("undefined rate ({code}): {reason}")]
    UndefinedRate { code: &'static str, reason: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("output already exists: {0}")]
    Collision(PathBuf),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error("{context}: {cause}")]
    Io { context: String, cause: std::io::Error },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            cause: source,
        }
    }
}
