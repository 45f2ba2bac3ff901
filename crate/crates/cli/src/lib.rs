//! Front end to the `qmt` library: scenario configs, artifact plumbing,
//! simulation, sweeps and certificates.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod runs;
pub mod sweep;

pub use config::ScenarioConfig;
pub use error::{CliError, Result};
