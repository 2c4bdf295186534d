use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite gradient for parameter `{0}`; step aborted")]
    NonFiniteGradient(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown behavior `{name}`; known behaviors are {known:?}")]
    UnknownBehavior { name: String, known: Vec<String> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("code group {group:?} holds {size} items but only {capacity} digit values are available; raise K or m")]
    GroupOverflow {
        group: Vec<u32>,
        size: usize,
        capacity: usize,
    },

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("malformed token sequence: {0}")]
    Sequence(String),

    #[error("input of length {len} exceeds the configured limit of {limit}")]
    TooLong { len: usize, limit: usize },

    #[error("beam search: {0}")]
    Beam(String),

    #[error("empty evaluation set: {0}")]
    EmptyEvaluation(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
