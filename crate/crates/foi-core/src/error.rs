use std::path::PathBuf;

/// Error type shared by every pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum FoiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("incomplete input: {0}")]
    IncompleteInput(String),
    #[error("empty valid mask: no position satisfies the tissue-coverage constraint")]
    EmptyValidMask,
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FoiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FoiError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, FoiError>;
