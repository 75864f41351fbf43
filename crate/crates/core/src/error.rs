use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    Vocab(String),

    #[error("invalid task spec: {0}")]
    TaskSpec(String),

    #[error("malformed prompt: {0}")]
    MalformedPrompt(String),

    #[error("step index {k} out of range 1..={num_steps}")]
    StepOutOfRange { k: usize, num_steps: usize },

    #[error("value {value} for {name} outside [0, 1]")]
    OutOfUnitRange { name: &'static str, value: f64 },

    #[error("group of size {0} is too small for a group-relative estimator")]
    GroupTooSmall(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

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

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
