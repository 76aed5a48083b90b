use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamHyper;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::networks::{DiscriminatorSpec, GeneratorSpec};

/// Hyperparameters of a training run. Field names match the TOML config keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Hops per full translation.
    #[serde(alias = "hops")]
    pub h: usize,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    /// Defaults to `ceil(min(|X|, |Y|) / batch_size)`.
    #[serde(default)]
    pub steps_per_epoch: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_interval: u64,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub discriminator: DiscriminatorSpec,
}

fn default_learning_rate() -> f64 {
    0.0002
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_batch_size() -> usize {
    1
}
fn default_epochs() -> u64 {
    100
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            h: 4,
            weights: LossWeights::default(),
            learning_rate: default_learning_rate(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            steps_per_epoch: None,
            seed: 0,
            checkpoint_interval: 0,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

impl TrainingConfig {
    /// The small profile used for tests and toy runs.
    pub fn tiny() -> Self {
        Self {
            batch_size: 6,
            generator: GeneratorSpec::tiny(),
            discriminator: DiscriminatorSpec::tiny(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::Config("h must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be >= 1".into()));
        }
        self.weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
        }
    }

    pub fn resolved_steps_per_epoch(&self, len_x: usize, len_y: usize) -> u64 {
        self.steps_per_epoch
            .unwrap_or_else(|| (len_x.min(len_y).div_ceil(self.batch_size)).max(1) as u64)
    }

    /// Hex SHA-256 of every setting that affects the trajectory of a run.
    ///
    /// `epochs` and `checkpoint_interval` are left out so a run can be resumed
    /// with a longer schedule or different checkpoint spacing.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.epochs = 0;
        canonical.checkpoint_interval = 0;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_takes_defaults() {
        let c = TrainingConfig::from_toml("h = 2\nseed = 9\n").unwrap();
        assert_eq!(c.h, 2);
        assert_eq!(c.learning_rate, 0.0002);
        assert_eq!((c.adam_beta1, c.adam_beta2), (0.5, 0.999));
        assert_eq!(c.epochs, 100);
        assert_eq!(c.weights, LossWeights::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainingConfig::from_toml("h = 0").is_err());
        assert!(TrainingConfig::from_toml("h = 1\nbatch_size = 0").is_err());
        assert!(TrainingConfig::from_toml("h = 1\nlearning_rate = -1.0").is_err());
        assert!(TrainingConfig::from_toml("h = 1\nbogus = 3").is_err());
    }

    #[test]
    fn hash_ignores_schedule_length_only() {
        let a = TrainingConfig::tiny();
        let mut b = a.clone();
        b.epochs = 7;
        b.checkpoint_interval = 3;
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn default_steps_per_epoch_rounds_up() {
        let c = TrainingConfig::tiny();
        assert_eq!(c.resolved_steps_per_epoch(500, 13), 3);
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainingConfig::tiny();
        assert_eq!(TrainingConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
