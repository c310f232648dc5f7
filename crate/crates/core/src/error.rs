use std::path::PathBuf;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("captioner returned an empty caption")]
    EmptyCaption,
    #[error("corrupt cache entry `{key}`: {reason}")]
    CorruptEntry { key: String, reason: String },
    #[error("invalid cache key `{0}`")]
    InvalidKey(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("masks do not partition the image: {0}")]
    PartitionViolation(String),
    #[error("label {0} is not among the active labels")]
    UnknownLabel(u16),
    #[error("missing annotation for image `{0}`")]
    MissingAnnotation(String),
    #[error("corrupt RLE: {0}")]
    CorruptRle(String),
    #[error("accumulator holds no scored pixels")]
    EmptyAccumulator,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error("png codec error: {0}")]
    Png(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error originates from a model backend or its cache rather
    /// than from user input or the filesystem.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::BackendUnavailable(_)
                | Error::ShapeMismatch(_)
                | Error::EmptyCaption
                | Error::CorruptEntry { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
