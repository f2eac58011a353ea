use thiserror::Error;

/// Errors produced by analysis, storage, and training operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Rank correlation is undefined (zero rank variance in one argument).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Filesystem failure while reading or writing checkpoint files.
    #[error("storage error at {path}: {source}")]
    Storage {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A checkpoint file failed integrity checks.
    #[error("corrupt checkpoint: {0}")]
    Corruption(String),

    /// A checkpoint manifest declares a format version this build cannot read.
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),

    /// Two checkpoints (or a plan and a checkpoint) disagree on tensor
    /// names or shapes.
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}")]
    Divergence { step: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn storage(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
