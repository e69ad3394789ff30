//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by simulation, inference, trackers, and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model constants (rates, covariances, dimensions).
    #[error("model configuration: {0}")]
    ModelConfig(String),

    /// A covariance (or precision) block failed a positive-definiteness check.
    #[error("covariance block for object {object} is not positive definite")]
    NotPositiveDefinite { object: usize },

    /// A tracker exhausted its step-damping budget.
    #[error("tracker diverged at sensor {sensor}, object {object}, iteration {iteration}")]
    TrackerDiverged {
        sensor: usize,
        object: usize,
        iteration: usize,
    },

    /// Simulation could not satisfy its constraints (e.g. connectivity retries).
    #[error("simulation: {0}")]
    Simulation(String),

    /// Mismatched lengths, unnormalised distributions, out-of-range parameters.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tracker name not present in the registry.
    #[error("unknown tracker '{name}' (available: {available})")]
    UnknownTracker { name: String, available: String },

    /// Scenario file failed validation.
    #[error("scenario: {0}")]
    Scenario(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
