use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("incomplete evaluation matrix: {0}")]
    IncompleteMatrix(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("missing recall score for image `{0}`")]
    MissingScore(String),

    #[error("coordinates outside image `{image_id}`: {detail}")]
    OutOfBounds { image_id: String, detail: String },

    #[error("frame sets differ: {0}")]
    FrameMismatch(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("detector timed out after {0:.1}s")]
    Timeout(f64),

    #[error("detector handle is dead: {0}")]
    DeadHandle(String),

    #[error("unknown image `{0}`")]
    UnknownImage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Short stable identifier used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidBox(_) => "invalid_box",
            Error::DegeneratePolygon(_) => "degenerate_polygon",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::InvalidConfig(_) => "invalid_config",
            Error::IncompleteMatrix(_) => "incomplete_matrix",
            Error::Undefined(_) => "undefined",
            Error::MissingScore(_) => "missing_score",
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::FrameMismatch(_) => "frame_mismatch",
            Error::Protocol(_) => "protocol",
            Error::Backend(_) => "backend",
            Error::Timeout(_) => "timeout",
            Error::DeadHandle(_) => "dead_handle",
            Error::UnknownImage(_) => "unknown_image",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Parse(_) => "parse",
        }
    }
}
