use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric guard: {0}")]
    NumericGuard(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("count error: {0}")]
    Count(String),

    #[error("invalid network spec at layer {layer}: {msg}")]
    Spec { layer: usize, msg: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("sigma calibration failed: {0}")]
    Calibration(String),

    #[error("mask error: {0}")]
    Mask(String),

    #[error("attack reliability too low: {successes}/{attempts} targets succeeded")]
    Reliability { successes: usize, attempts: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-finite value at line {line}")]
    Value { line: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown shape class `{0}`")]
    Class(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    /// The error with any per-sample annotation peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Sample { source, .. } => source.root(),
            other => other,
        }
    }
}
