use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),
    #[error("image `{image}` lists tag `{tag}` more than once")]
    DuplicateTag { image: String, tag: String },
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{feature}` has no row for image `{image}`")]
    MissingFeatureRow { feature: String, image: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in feature `{feature}` for image `{image}`")]
    NonFinite { feature: String, image: String },
    #[error("tag `{tag}` is not assigned to image `{image}`")]
    TagAbsent { image: String, tag: String },
    #[error("empty collection")]
    EmptyCollection,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate normalization: {0}")]
    Degenerate(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("candidate sets differ: {0}")]
    CandidateMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty score table")]
    EmptyTable,
    #[error("no support: {0}")]
    EmptySupport(String),
    #[error("cannot sample pairs: {0}")]
    NoPairs(String),
    #[error("no relevant training items: {0}")]
    NoRelevant(String),
    #[error("non-finite loss during metric learning")]
    NonFiniteLoss,
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("missing weights: {0}")]
    MissingWeights(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
