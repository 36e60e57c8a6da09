use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid physics parameters: {0}")]
    Params(String),

    #[error("cannot fit threshold: {0}")]
    Fit(String),

    #[error("path enumeration refused for length {len} (limit {limit})")]
    OracleGuard { len: usize, limit: usize },

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("parse error in section [{section}]: {message}")]
    Parse { section: String, message: String },

    #[error("shape error in layer {layer}: {message}")]
    LayerShape { layer: usize, message: String },

    #[error("parameter {value} out of fixed-point range (|x| must be < {limit})")]
    Range { value: f64, limit: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("sub-bin {bin} holds {count} edges but only {ticks} clock ticks")]
    TtlOverflow { bin: usize, count: u32, ticks: u64 },

    #[error("no samples to summarize")]
    EmptyStatistics,

    #[error("calibration did not reach target {target} (best accuracy {best_accuracy} at {best})")]
    Calibration {
        target: f64,
        best_accuracy: f64,
        best: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
