use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the registration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation representation: {0}")]
    DegenerateInput(&'static str),

    #[error("invalid intensity range: x_max ({x_max}) must exceed x_th ({x_th})")]
    BadRange { x_th: f32, x_max: f32 },

    #[error("downsample factor {factor} does not divide shape {shape:?}")]
    BadFactor { factor: usize, shape: [usize; 3] },

    #[error("shape mismatch{}: {detail}", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
    ShapeMismatch { node: Option<usize>, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    DivergenceDetected { iteration: u64, loss: f64 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("invalid volume file: {0}")]
    BadVolumeFile(String),

    #[error("no records to summarize")]
    EmptyInput,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            node: None,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
