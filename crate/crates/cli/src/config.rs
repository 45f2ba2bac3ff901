//! Scenario configuration, read from TOML.

use std::path::{Path, PathBuf};

use qmt::hybrid::NoiseMode;
use qmt::hysteresis::Mode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Only `brockett` is built in.
    pub system: String,
    pub seed: u64,
    pub mode: Mode,
    /// Output directory. Not part of the config hash.
    pub out: PathBuf,
    /// Runs stop once `|x − x̄|` drops to this.
    pub stop_radius: f64,
    /// `ε` as a fraction of the largest `T̂` on the grid.
    pub epsilon_fraction: f64,
    /// Half-width of the working box `K = [−k, k]ⁿ` around `x̄`.
    pub working_box: f64,
    pub grid: GridConfig,
    pub slices: SliceConfig,
    pub noise: NoiseConfig,
    pub sweep: SweepConfig,
    pub certification: CertificationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub h: f64,
    pub t_max: f64,
}

/// Graded covector slice: radial values up to `lambda_max` with first step
/// `dlambda0`, angular resolution from `n_theta_max` down to `n_theta_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    pub lambda_max: f64,
    pub dlambda0: f64,
    pub n_theta_max: usize,
    pub n_theta_min: usize,
    pub lambda_knee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub mode: NoiseMode,
    /// Fraction of the admissible radius `χ`.
    pub scale: f64,
    /// Noise seeds per start in a sweep.
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Grid points per axis over the working box.
    pub per_axis: usize,
    /// Starts closer than this to the singular set are skipped.
    pub axis_tube: f64,
    /// Extra horizon beyond `τ(|x₀|)`.
    pub horizon_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificationConfig {
    pub escape_seeds: usize,
    pub omega_seeds: usize,
    /// Grid points per axis for the `δ` envelope runs.
    pub envelope_per_axis: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            system: "brockett".into(),
            seed: 1,
            mode: Mode::Corrected,
            out: PathBuf::from("out"),
            stop_radius: 1e-3,
            epsilon_fraction: 0.1,
            working_box: 1.5,
            grid: GridConfig::default(),
            slices: SliceConfig::default(),
            noise: NoiseConfig::default(),
            sweep: SweepConfig::default(),
            certification: CertificationConfig::default(),
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { half_width: 1.5, h: 0.05, t_max: 3.5 }
    }
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self { lambda_max: 10.0, dlambda0: 0.008, n_theta_max: 384, n_theta_min: 32, lambda_knee: 0.47 }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { mode: NoiseMode::Seeded, scale: 1.0, seeds: 5 }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { per_axis: 9, axis_tube: 0.1, horizon_slack: 1.0 }
    }
}

impl Default for CertificationConfig {
    fn default() -> Self {
        Self { escape_seeds: 100, omega_seeds: 100, envelope_per_axis: 5 }
    }
}

impl ScenarioConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Grid spacing is checked by the field builder, so a bad `h` surfaces
    /// there with its stage name.
    pub fn validate(&self) -> Result<()> {
        if self.system != "brockett" {
            return Err(CliError::Config(format!("unknown system {:?}", self.system)));
        }
        if !(self.epsilon_fraction > 0.0) {
            return Err(CliError::Config(format!("epsilon_fraction must be positive, got {}", self.epsilon_fraction)));
        }
        if !(0.0..=1.0).contains(&self.noise.scale) {
            return Err(CliError::Config(format!("noise scale must lie in [0, 1], got {}", self.noise.scale)));
        }
        if !(self.working_box >= 0.0) {
            return Err(CliError::Config(format!("working box must contain the target, half-width {}", self.working_box)));
        }
        if !(self.stop_radius >= 0.0) {
            return Err(CliError::Config(format!("stop_radius must be non-negative, got {}", self.stop_radius)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, with the output directory blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn hash_ignores_output_directory_only() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ScenarioConfig::from_toml("epsilon_fraction = 0.0").is_err());
        assert!(ScenarioConfig::from_toml("[noise]\nscale = 1.5").is_err());
        assert!(ScenarioConfig::from_toml("system = \"dubins\"").is_err());
        assert!(ScenarioConfig::from_toml("bogus = 1").is_err());
        let c = ScenarioConfig::from_toml("[grid]\nh = 0.1").unwrap();
        assert_eq!(c.grid.h, 0.1);
        assert_eq!(c.grid.half_width, 1.5);
    }
}
