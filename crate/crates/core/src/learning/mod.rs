//! Gradient-based learning of capture angles.
//!
//! The loss is the mean squared Frobenius error of least-squares reconstructions
//! from noisy captures. Its gradient flows through the design matrix `A(Θ)` and its
//! pseudo-inverse, so the angles can be trained with Adam from a DRR start.

mod loss;
mod train;

pub use loss::{evaluate, expected_loss, grad_loss, loss, noise_draws, ErrorStats, LossGradient};
pub use train::{cross_validate, learn, learn_on, CrossValidation, LearnedSchedule};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ellipsometry::{OpticalPath, SensorMode};
use crate::error::{Error, Result};
use crate::polarization::MuellerMatrix;
use crate::scene::generate_ensemble;

/// Where training samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    #[serde(default = "default_ensemble_size")]
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Divide every sample by its `m00`.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_ensemble_size() -> usize {
    500
}

fn default_true() -> bool {
    true
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            size: default_ensemble_size(),
            seed: 0,
            normalize: true,
        }
    }
}

impl EnsembleSpec {
    pub fn samples(&self) -> Result<Vec<MuellerMatrix>> {
        let e = generate_ensemble(self.seed, self.size)?;
        Ok(if self.normalize {
            e.normalized()
        } else {
            e.samples
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Number of captures.
    pub k: usize,
    pub sensor_mode: SensorMode,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Which of `(θ¹, θ², θ³, θ⁴)` the optimizer may move.
    #[serde(default = "default_trainable")]
    pub trainable: [bool; 4],
    /// Fraction of the training samples held out for best-iterate selection.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default = "default_path")]
    pub path: OpticalPath,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
}

fn default_sigma() -> f64 {
    5e-4
}
fn default_learning_rate() -> f64 {
    1e-2
}
fn default_iterations() -> usize {
    2000
}
fn default_batch() -> usize {
    32
}
fn default_trainable() -> [bool; 4] {
    [true; 4]
}
fn default_holdout() -> f64 {
    0.2
}
fn default_path() -> OpticalPath {
    OpticalPath::Spatial
}

impl TrainingConfig {
    pub fn new(k: usize, sensor_mode: SensorMode) -> Self {
        Self {
            k,
            sensor_mode,
            noise_sigma: default_sigma(),
            learning_rate: default_learning_rate(),
            iterations: default_iterations(),
            batch_size: default_batch(),
            seed: 0,
            trainable: default_trainable(),
            holdout_fraction: default_holdout(),
            path: default_path(),
            ensemble: EnsembleSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            ));
        }
        if self.ensemble.size == 0 {
            return bad("ensemble.size must be at least 1".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("training config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("training config: {e}")))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_round_trip() {
        let c = TrainingConfig::from_toml("k = 15\nsensor_mode = \"polarizer_array\"\n").unwrap();
        assert_eq!(c, TrainingConfig::new(15, SensorMode::PolarizerArray));
        assert_eq!(c.iterations, 2000);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.noise_sigma, 5e-4);
        let back = TrainingConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        let mut other = c.clone();
        other.seed = 1;
        assert_ne!(other.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::from_toml("k = 0\nsensor_mode = \"intensity\"\n").is_err());
        assert!(
            TrainingConfig::from_toml("k = 3\nsensor_mode = \"intensity\"\nbatch_size = 0\n")
                .is_err()
        );
        assert!(TrainingConfig::from_toml(
            "k = 3\nsensor_mode = \"intensity\"\nlearning_rte = 0.1\n"
        )
        .is_err());
        assert!(TrainingConfig::from_toml(
            "k = 3\nsensor_mode = \"intensity\"\nholdout_fraction = 1.0\n"
        )
        .is_err());
    }
}
