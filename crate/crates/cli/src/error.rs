use std::fmt;
use std::io::ErrorKind;

use cloudcast_core::checkpoint::CheckpointError;
use cloudcast_core::training::TrainError;
use cloudcast_core::TensorError;
use cloudcast_pipeline::PipelineError;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_TRAINING: u8 = 3;
pub const EXIT_MISSING: u8 = 4;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        let code = if e.kind() == ErrorKind::NotFound { EXIT_MISSING } else { EXIT_CONFIG };
        CliError {
            code,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn train_code(e: &TrainError) -> u8 {
    match e {
        TrainError::Config(_) | TrainError::EmptySplit(_) => EXIT_CONFIG,
        _ => EXIT_TRAINING,
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::MissingCheckpoint(_) => EXIT_MISSING,
            PipelineError::Io { source, .. } if source.kind() == ErrorKind::NotFound => EXIT_MISSING,
            PipelineError::Training { source, .. } => train_code(source),
            PipelineError::Model(_) | PipelineError::Metric(_) => EXIT_TRAINING,
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError {
            code: train_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        let code = match &e {
            CheckpointError::Io { source, .. } if source.kind() == ErrorKind::NotFound => EXIT_MISSING,
            _ => EXIT_CONFIG,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}
