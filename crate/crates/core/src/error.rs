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

    /// A line-oriented input could not be parsed.
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("unknown document id {0:?}")]
    UnknownDocument(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid header: expected {expected:?}, found {found:?}")]
    Header { expected: String, found: String },

    #[error("insufficient annotations: need at least {needed}, have {have}")]
    InsufficientAnnotations { needed: usize, have: usize },

    #[error("grammar: {0}")]
    Grammar(String),

    #[error("degenerate fold {fold}: all annotated documents share one label")]
    DegenerateFold { fold: usize },

    #[error("empty fold {fold}")]
    EmptyFold { fold: usize },

    #[error("need at least three labeling functions, have {0}")]
    TooFewLabelingFunctions(usize),

    #[error("unresolvable labeling function {lf_id:?}: {reason}")]
    Unresolvable { lf_id: String, reason: String },

    #[error("invalid labeling function spec {lf_id:?}: {reason}")]
    InvalidSpec { lf_id: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no model state for round {0}")]
    NoModelState(u32),

    #[error("no selected batch for round {0}")]
    NoBatch(u32),

    #[error("round advancing")]
    Advancing,

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
