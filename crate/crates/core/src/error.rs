use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum SlmError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid config `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("retrieval failed: {0}")]
    Retrieval(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("non-finite value during {stage} at step {step}")]
    Numeric { stage: String, step: usize },

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: schema error: missing or invalid field \"{field}\"")]
    Schema { line: usize, field: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SlmError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        SlmError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SlmError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, SlmError>;
