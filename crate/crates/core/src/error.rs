//! Error type shared by every module of the crate.

use std::path::PathBuf;

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

    /// Malformed or unsupported NIfTI content. `field` names the header
    /// field at fault.
    #[error("nifti {field}: {message}")]
    Nifti { field: &'static str, message: String },

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("degenerate variance: differences are constant and nonzero, t is undefined")]
    DegenerateVariance,

    #[error("predictor ({axis}): {kind}")]
    Predictor { axis: String, kind: PredictorFailure },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

/// The distinct ways an external predictor run can fail.
#[derive(Debug, Error)]
pub enum PredictorFailure {
    #[error("could not launch command: {0}")]
    Spawn(String),
    #[error("exited with status {code:?}; stderr: {stderr}")]
    NonZeroExit { code: Option<i32>, stderr: String },
    #[error("timed out after {0} s")]
    Timeout(u64),
    #[error("grid mismatch: expected {expected}, got {got}")]
    GridMismatch { expected: String, got: String },
    #[error("probability out of range [0, 1]: {0}")]
    OutOfRange(f32),
    #[error("output unreadable: {0}")]
    Output(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn nifti(field: &'static str, message: impl Into<String>) -> Self {
        Error::Nifti {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    /// Wraps the error with the name of the stage or subject it came from.
    pub fn context(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Short, stable category name used as a message prefix by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Nifti { .. } => "nifti",
            Error::GridMismatch { .. } => "grid-mismatch",
            Error::InvalidInput(_) => "invalid-input",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::DegenerateVariance => "degenerate-variance",
            Error::Predictor { .. } => "predictor",
            Error::Stage { source, .. } => source.kind(),
        }
    }
}
