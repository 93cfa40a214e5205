use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NanGradient(String),

    #[error("missing gradient for trainable parameter `{0}`")]
    MissingGradient(String),

    #[error("empty loss: every target position is ignored")]
    EmptyLoss,

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("dialogue `{id}`: {msg}")]
    InvalidDialogue { id: String, msg: String },

    #[error("unknown emotion `{0}`")]
    UnknownEmotion(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },

    #[error("no candidate pool for emotion {0}")]
    MissingPool(usize),

    #[error("labeler digest mismatch: expected {expected}, found {found}")]
    LabelerMismatch { expected: String, found: String },

    #[error("score out of range in record {record}: {field}={value}")]
    OutOfRange { record: String, field: &'static str, value: i64 },

    #[error("sample `{0}` has three distinct votes but no tiebreak")]
    MissingTiebreak(String),

    #[error("sample `{0}`: {1}")]
    InvalidVote(String, String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
