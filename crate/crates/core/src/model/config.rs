use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvo::{DEFAULT_VOICES, STEPS};

/// Shape of the variational sequence model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub steps: usize,
    pub voices: usize,
    pub latent_dim: usize,
    pub token_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            steps: STEPS,
            voices: DEFAULT_VOICES,
            latent_dim: 16,
            token_dim: 32,
            layers: 2,
            heads: 2,
            ff_dim: 64,
        }
    }
}

impl Hyperparams {
    /// Small configuration used for finite-difference gradient checks.
    pub fn tiny() -> Self {
        Self {
            steps: 4,
            voices: 2,
            latent_dim: 4,
            token_dim: 8,
            layers: 1,
            heads: 2,
            ff_dim: 16,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim / self.heads
    }

    /// Per-step feature width: hits, velocities and offsets.
    pub fn feature_dim(&self) -> usize {
        3 * self.voices
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.steps,
            self.voices,
            self.latent_dim,
            self.token_dim,
            self.layers,
            self.heads,
            self.ff_dim,
        ];
        if all.contains(&0) {
            return Err(Error::Config("hyperparameters must be positive".into()));
        }
        if !self.token_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "token_dim {} not divisible by heads {}",
                self.token_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta_max: f64,
    pub beta_warmup_epochs: usize,
    pub seed: u64,
    pub corpus_size: usize,
    pub holdout_fraction: f64,
    /// Divide β by the `T·V` cells of a pattern so the per-pattern KL is
    /// weighed against the per-cell reconstruction terms on the same scale.
    /// Without it the default β makes an uninformative posterior optimal.
    #[serde(default = "default_true")]
    pub kl_per_cell: bool,
    pub hyper: Hyperparams,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            beta_max: 0.2,
            beta_warmup_epochs: 15,
            seed: 0,
            corpus_size: 2000,
            holdout_fraction: 0.1,
            kl_per_cell: true,
            hyper: Hyperparams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.corpus_size == 0 {
            return Err(Error::Config("epochs, batch_size and corpus_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.beta_max >= 0.0) {
            return Err(Error::Config("learning_rate must be positive and beta_max >= 0".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config("holdout_fraction must lie in (0, 1)".into()));
        }
        if self.hyper.steps != STEPS {
            return Err(Error::Config(format!(
                "training corpus patterns have {STEPS} steps, model has {}",
                self.hyper.steps
            )));
        }
        Ok(())
    }

    /// KL weight for `epoch` (0-based): linear ramp from 0 to `beta_max`.
    pub fn beta_at(&self, epoch: usize) -> f64 {
        if self.beta_warmup_epochs == 0 {
            return self.beta_max;
        }
        let ramp = epoch as f64 / self.beta_warmup_epochs as f64;
        self.beta_max * ramp.min(1.0)
    }

    /// Weight actually passed to the loss at `epoch`.
    pub fn effective_beta(&self, epoch: usize) -> f64 {
        let beta = self.beta_at(epoch);
        if self.kl_per_cell {
            beta / (self.hyper.steps * self.hyper.voices) as f64
        } else {
            beta
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_starts_at_zero_and_saturates() {
        let c = TrainConfig::default();
        assert_eq!(c.beta_at(0), 0.0);
        assert!((c.beta_at(5) - 0.2 / 3.0).abs() < 1e-15);
        assert_eq!(c.beta_at(15), 0.2);
        assert_eq!(c.beta_at(59), 0.2);
        assert_eq!(c.effective_beta(20), 0.2 / 288.0);
    }

    #[test]
    fn rejects_bad_holdout_and_heads() {
        let mut c = TrainConfig::default();
        c.holdout_fraction = 1.0;
        assert!(c.validate().is_err());
        let mut h = Hyperparams::default();
        h.heads = 3;
        assert!(h.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
