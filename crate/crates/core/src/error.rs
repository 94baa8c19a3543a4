use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("missing id: {0}")]
    MissingId(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("zero vector{}", .0.as_deref().map(|id| format!(" for {id}")).unwrap_or_default())]
    ZeroVector(Option<String>),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    BadVersion(u8),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("norm violation for {id}: |v| = {norm}")]
    NormViolation { id: String, norm: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("tokenizer not loaded")]
    TokenizerNotLoaded,

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("missing Q: marker in response {0:?}")]
    MissingQueryMarker(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("stores are misaligned; missing: {}", .0.join(", "))]
    Misaligned(Vec<String>),

    #[error("id {0} appears in more than one split")]
    SplitCollision(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
