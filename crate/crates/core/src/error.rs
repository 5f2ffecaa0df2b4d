use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("image decode error: {0}")]
    Decode(String),

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("bad magic: expected DFG1")]
    BadMagic,

    #[error("unsupported DFG1 version {0}")]
    BadVersion(u32),

    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSizeMismatch { expected: usize, found: usize },

    #[error("non-finite feature value at index {0}")]
    NonFinite(usize),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("point ({row}, {col}) out of bounds for {height}x{width}")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("duplicate prompt ({row}, {col})")]
    DuplicatePrompt { row: usize, col: usize },

    #[error("no positive prompts")]
    NoPositivePrompts,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown model id {0:?}")]
    UnknownModel(String),

    #[error("no features for model {model}: {detail}")]
    NoFeatures { model: String, detail: String },

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("predictor failure: {0}")]
    Predictor(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping any `Context` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_missing_input(&self) -> bool {
        matches!(
            self.root(),
            Error::MissingFile(_) | Error::NoFeatures { .. }
        )
    }
}
