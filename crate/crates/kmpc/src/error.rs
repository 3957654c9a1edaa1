//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("optimal control problem infeasible at state {state:?}")]
    Infeasible { state: Vec<f64> },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("controller failed at step {step}: {source}")]
    ControllerFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("rollout failed for sample {sample}: {source}")]
    SampleFailure {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix is not Schur stable (spectral radius {rho})")]
    NotSchur { rho: f64 },

    #[error("duplicate data points at indices {i} and {j}")]
    DuplicateData { i: usize, j: usize },

    #[error("terminal set design failed: {0}")]
    DesignFailure(String),

    #[error("union of boxes has zero volume")]
    DegenerateUnion,

    #[error("artifact validation failed: {0}")]
    Validation(String),

    #[error("unsupported schema version {found} (this build reads version {supported}; upgrade the tool or re-export the artifact)")]
    SchemaVersion { found: u64, supported: u64 },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        Error::ControllerFailure {
            step,
            source: Box::new(self),
        }
    }

    pub fn for_sample(self, sample: usize) -> Self {
        Error::SampleFailure {
            sample,
            source: Box::new(self),
        }
    }
}
