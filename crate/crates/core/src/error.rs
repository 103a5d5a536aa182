use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid robot model: {0}")]
    InvalidModel(String),

    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),

    #[error("normalized time {0} is outside [0, 1]")]
    NormalizedTimeOutOfRange(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("trajectory has no controls and only {points} grid points; at least 4 are needed to finite-difference")]
    MissingControls { points: usize },

    #[error("grid produced no problem specs after filtering")]
    EmptyGrid,

    #[error("training diverged: {0}")]
    Training(String),

    #[error("matrix is not positive definite after jitter {jitter:e} (size {size})")]
    NotPositiveDefinite { size: usize, jitter: f64 },

    #[error("prior energy {0} J is not positive; savings are undefined")]
    DegeneratePriorEnergy(f64),

    #[error("model is missing input standardization parameters")]
    MissingStandardization,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
