use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    InvalidDimension { expected: usize, got: usize },

    #[error("control norm {norm} exceeds 1 + {tol}")]
    ConstraintViolation { norm: f64, tol: f64 },

    #[error("covector is degenerate (H1 = {h1:e}); abnormal direction")]
    DegenerateCovector { h1: f64 },

    #[error("integration failure: {0}")]
    IntegrationFailure(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("point {0:?} is not covered by the time field")]
    Uncovered(Vec<f64>),

    #[error("no optimal control at {0:?}: point lies in the singular region")]
    NoOptimalControl(Vec<f64>),

    #[error("degenerate gradient at {0:?}")]
    DegenerateGradient(Vec<f64>),

    #[error("shooting did not converge to {target:?}: {reason}")]
    ShootingFailure { target: Vec<f64>, reason: String },

    #[error("no escape control found near {center:?}")]
    EscapeSearchFailure { center: Vec<f64> },

    #[error("shell certification failed: {0}")]
    ShellCertificationFailure(String),

    #[error("invalid shells: {0}")]
    InvalidShells(String),

    #[error("jump target undefined at {0:?}")]
    JumpTargetUndefined(Vec<f64>),

    #[error("stuck state at t = {t}: ({x:?}, {label}) is in neither C nor D")]
    StuckState { t: f64, x: Vec<f64>, label: String },

    #[error("blow-up at t = {t}: |x| = {norm}")]
    BlowUp { t: f64, norm: f64 },

    #[error("instantaneous Zeno behaviour at t = {t}: jump chain reached {n_max}")]
    InstantZeno { t: f64, n_max: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
