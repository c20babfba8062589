use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch norm evaluated in eval mode before running statistics were populated")]
    EmptyRunningStats,

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("CFL number {cfl:.4} exceeds the stability limit {limit}")]
    Cfl { cfl: f64, limit: f64 },

    #[error("sensor geometry rejected: {0}")]
    Geometry(String),

    #[error("non-finite pressure field at time step {step}")]
    NonFinite { step: usize },

    #[error("crop window rejected: {0}")]
    Crop(String),

    #[error("architecture rejected: {0}")]
    Architecture(String),

    #[error("training diverged at iteration {iteration} (seed {seed}): loss {loss}")]
    Diverged { iteration: usize, seed: u64, loss: f64 },

    #[error("sample with seed {seed} failed: {source}")]
    Sample {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
