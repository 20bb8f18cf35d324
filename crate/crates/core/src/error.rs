use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("sequence must not be empty")]
    EmptySequence,

    #[error("no gradient populated for parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("document must contain at least one token")]
    EmptyDocument,

    #[error("encoder kind `{0}` cannot encode documents; vectors must be loaded from a file")]
    UnsupportedEncoder(&'static str),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("row index {index} out of range for matrix with {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("duplicate example id `{0}`")]
    DuplicateId(String),

    #[error("zero-norm vector has no cosine similarity")]
    ZeroVector,

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("duplicate class `{0}`")]
    DuplicateClass(String),

    #[error("invalid class label `{0}`")]
    InvalidLabel(String),

    #[error("need {needed} classes besides the query's own, found {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("class `{0}` has too few members to form a positive pair")]
    ClassTooSmall(String),

    #[error("neighbor list must not be empty")]
    EmptyNeighbors,

    #[error("seen class set is empty")]
    EmptySeenSet,

    #[error("class `{0}` has no examples")]
    EmptyClass(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, batch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
