//! Quasi-optimal hybrid feedback for driftless control-affine systems.

pub mod error;
pub mod escape;
pub mod extremal;
pub mod hybrid;
pub mod hysteresis;
pub mod linalg;
pub mod ode;
pub mod synthesis;
pub mod system;

pub use error::{Error, Result};
pub use system::{brockett_system, eval_dynamics, validate_control, ControlSystem, ControlVector};
