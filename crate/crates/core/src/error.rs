use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("step size {dt} is too large for epsilon {epsilon} (need dt <= epsilon / 10)")]
    Stiffness { dt: f64, epsilon: f64 },

    #[error("linearization is not stable at y = {y} (a = {a})")]
    NotHurwitz { y: f64, a: f64 },

    #[error("collapsed algebraic state: voltage {v} at bus {bus}")]
    CollapsedVoltage { bus: usize, v: f64 },

    #[error("algebraic Jacobian is singular")]
    SingularJacobian,

    #[error("power flow has no solution")]
    NoSolution,

    #[error("case validation failed: {0}")]
    Validation(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(
        "trajectory failed (sigma = {sigma}, schedule = {schedule}, path = {path_index}): {message}"
    )]
    Trajectory {
        sigma: f64,
        schedule: usize,
        path_index: u64,
        message: String,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
