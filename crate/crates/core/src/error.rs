use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Each variant maps onto one CLI exit-code class via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("user {user} has interacted with every item; no negative can be sampled")]
    DegenerateUser { user: usize },
    #[error("index {index} out of range for dimension {bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate transition kernel at t = {0} (zero variance)")]
    DegenerateKernel(f64),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint version mismatch: file has {found}, this build reads {expected}")]
    VersionMismatch { found: String, expected: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 I/O, 3 numeric, 4 compatibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::CorruptCheckpoint(_) => 2,
            Error::NonFinite { .. } | Error::DegenerateKernel(_) => 3,
            Error::VersionMismatch { .. } | Error::Incompatible(_) => 4,
            Error::DegenerateDataset(_) | Error::DegenerateUser { .. } => 2,
            Error::IndexOutOfRange { .. } | Error::Shape(_) => 4,
            Error::InvalidArgument(_) | Error::Config(_) => 1,
        }
    }
}
