use std::path::PathBuf;

use cloudcast_core::training::TrainError;
use cloudcast_core::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("site at ({lat}, {lon}) lies outside the grid footprint")]
    OutsideFootprint { lat: f64, lon: f64 },
    #[error("pixel ({row}, {col}) outside {height}x{width} frame")]
    PixelOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} at byte {offset}: {detail}")]
    Parse { path: PathBuf, offset: u64, detail: String },
    #[error("manifest mismatch: {0}")]
    Manifest(String),
    #[error("dataset too small: {0}")]
    TooSmall(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("scenario {scenario} does not match net lineage: {detail}")]
    LineageMismatch { scenario: String, detail: String },
    #[error("training failed for {context}: {source}")]
    Training {
        context: String,
        #[source]
        source: TrainError,
    },
    #[error(transparent)]
    Model(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] cloudcast_core::metrics::MetricError),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, offset: u64, detail: impl Into<String>) -> Self {
        PipelineError::Parse {
            path: path.into(),
            offset,
            detail: detail.into(),
        }
    }
}
