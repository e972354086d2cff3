use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),

    #[error("word {word:?} has an out-of-alphabet character at position {position}")]
    InvalidWord { word: String, position: usize },

    #[error("{value:?} is not a value of feature {feature}")]
    InvalidFeatureValue { feature: String, value: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),

    #[error("no path: {0}")]
    NoPath(String),

    #[error("reference label sequence is not in the lattice")]
    ReferenceNotInLattice,

    #[error("feature manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn empty(what: impl Into<String>) -> Self {
        Error::Empty(what.into())
    }

    pub(crate) fn invalid(what: impl Into<String>) -> Self {
        Error::InvalidArgument(what.into())
    }
}
