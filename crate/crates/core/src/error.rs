use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Tensor or matrix dimensions do not line up for an operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A non-finite value appeared where finite arithmetic was required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// Two artifacts carry incompatible provenance hashes.
    #[error("{kind} hash mismatch: expected {expected}, got {got}")]
    HashMismatch {
        kind: &'static str,
        expected: String,
        got: String,
    },

    /// Numerical procedure failed to converge or diverged.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file {path}: {detail}")]
    Parse { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code for the CLI: 2 for config problems, 3 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::ShapeMismatch { .. } => 2,
            Error::NonFinite { .. } | Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
