use std::path::PathBuf;

use emoformer_tensor::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed WAV at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("input too short: {what} needs at least {needed}, got {actual}")]
    TooShort {
        what: &'static str,
        needed: usize,
        actual: usize,
    },
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("build error at layer {layer}: {message}")]
    Build { layer: String, message: String },
    #[error("unknown label {label:?}; active emotion set is [{set}]")]
    UnknownLabel { label: String, set: String },
    #[error("cannot stratify: class {label:?} has {count} sample(s), need at least 2")]
    Stratification { label: String, count: usize },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("numeric fault at epoch {epoch}, batch {batch}: {detail}")]
    NumericFault {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("unknown {kind} {name:?}; registered: {available}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Self::Shape {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Self::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::Tensor(TensorError::NumericFault { .. }) | Error::NumericFault { .. } => false,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Integrity(_) => false,
            _ => true,
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
