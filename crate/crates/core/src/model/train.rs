use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::corpus::synth_corpus;
use super::loss::{loss_and_grad, LossParts, Sample};
use super::params::ModelWeights;
use super::vae::{decode_logits, encode};
use crate::error::{Error, Result};
use crate::hvo::HvoPattern;
use crate::scalar::Scalar;

/// Adaptive moment estimation with the usual defaults.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![S::zero(); params],
            v: vec![S::zero(); params],
        }
    }

    pub fn update(&mut self, params: &mut [S], grad: &[S]) {
        self.step += 1;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let (one_b1, one_b2) = (S::one() - b1, S::one() - b2);
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let lr_t = S::lit(self.lr * c2.sqrt() / c1);
        let eps = S::lit(self.eps * c2.sqrt());
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            params[i] -= lr_t * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub beta: f64,
    /// β after per-cell normalization, as applied to the loss.
    pub effective_beta: f64,
    /// Batch-mean loss components over the epoch.
    pub loss: LossParts,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub hit_precision: f64,
    pub hit_recall: f64,
    pub hit_f1: f64,
    /// Mean absolute velocity error over ground-truth hit cells.
    pub velocity_mae: f64,
    pub patterns: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub holdout: EvalMetrics,
    pub train_size: usize,
    pub holdout_size: usize,
}

/// Reconstruction quality of `decode(mean(encode(p)))` with a 0.5 hit threshold.
pub fn evaluate<S: Scalar>(weights: &ModelWeights<S>, patterns: &[HvoPattern]) -> Result<EvalMetrics> {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let (mut vel_err, mut vel_n) = (0.0f64, 0usize);
    for p in patterns {
        let g = encode(weights, p)?;
        let d = decode_logits(weights, &g.mean())?;
        for (i, &truth) in p.hits().iter().enumerate() {
            let pred = d.hit_probs[i] >= 0.5;
            match (pred, truth) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
            if truth {
                vel_err += (d.velocities[i] - p.velocities()[i]).abs();
                vel_n += 1;
            }
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if tp > 0 { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 } else { 0.0 };
    Ok(EvalMetrics {
        hit_precision: precision,
        hit_recall: recall,
        hit_f1: f1,
        velocity_mae: if vel_n > 0 { vel_err / vel_n as f64 } else { 0.0 },
        patterns: patterns.len(),
    })
}

const SPLIT_SALT: u64 = 0x005e_ed0f_5917;

/// Deterministic train/holdout split of the synthetic corpus.
pub fn split_corpus(config: &TrainConfig) -> Result<(Vec<HvoPattern>, Vec<HvoPattern>)> {
    let corpus = synth_corpus(config.seed, config.corpus_size)?;
    let n = corpus.len();
    if n < 2 {
        return Err(Error::Config("corpus needs at least two patterns for a holdout split".into()));
    }
    let holdout = ((n as f64 * config.holdout_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ SPLIT_SALT));
    let test = idx[..holdout].iter().map(|&i| corpus[i].clone()).collect();
    let train = idx[holdout..].iter().map(|&i| corpus[i].clone()).collect();
    Ok((train, test))
}

/// Trains a fresh model on the synthetic corpus. Same config, same weights,
/// bit for bit.
pub fn train<S: Scalar>(config: &TrainConfig) -> Result<(ModelWeights<S>, TrainReport)> {
    train_with_progress(config, |_| {})
}

pub fn train_with_progress<S: Scalar>(
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<(ModelWeights<S>, TrainReport)> {
    config.validate()?;
    let (train_set, holdout) = split_corpus(config)?;
    let samples: Vec<Sample<S>> = train_set.iter().map(Sample::from_pattern).collect();

    let mut weights = ModelWeights::<S>::init(config.hyper, config.seed)?;
    let mut opt = Adam::<S>::new(weights.param_count(), config.learning_rate);
    let mut grad = vec![S::zero(); weights.param_count()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let beta = config.beta_at(epoch);
        let effective_beta = config.effective_beta(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<Sample<S>> = chunk.iter().map(|&i| samples[i].clone()).collect();
            grad.iter_mut().for_each(|g| *g = S::zero());
            let noise_seed = rng.random::<u64>();
            let parts = loss_and_grad(&weights, &batch, noise_seed, effective_beta, Some(&mut grad))?;
            if let Some(component) = parts.non_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    component,
                });
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    component: "gradient",
                });
            }
            opt.update(weights.values_mut(), &grad);
            sum.total += parts.total;
            sum.bce_hits += parts.bce_hits;
            sum.mse_vel += parts.mse_vel;
            sum.mse_off += parts.mse_off;
            sum.kl += parts.kl;
            batches += 1;
        }
        let k = batches as f64;
        let metrics = EpochMetrics {
            epoch,
            beta,
            effective_beta,
            loss: LossParts {
                total: sum.total / k,
                bce_hits: sum.bce_hits / k,
                mse_vel: sum.mse_vel / k,
                mse_off: sum.mse_off / k,
                kl: sum.kl / k,
            },
        };
        log::info!(
            "epoch {epoch:>3} beta {beta:.4} total {:.5} bce {:.5} vel {:.5} off {:.5} kl {:.3}",
            metrics.loss.total,
            metrics.loss.bce_hits,
            metrics.loss.mse_vel,
            metrics.loss.mse_off,
            metrics.loss.kl
        );
        progress(&metrics);
        epochs.push(metrics);
    }

    let holdout_metrics = evaluate(&weights, &holdout)?;
    Ok((
        weights,
        TrainReport {
            epochs,
            holdout: holdout_metrics,
            train_size: train_set.len(),
            holdout_size: holdout.len(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Adam::<f64>::new(2, 0.01);
        let mut p = vec![1.0, -1.0];
        opt.update(&mut p, &[0.5, -2.0]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn evaluate_perfect_and_empty_predictions() {
        let w = ModelWeights::<f32>::init(Default::default(), 0).unwrap();
        let m = evaluate(&w, &[HvoPattern::empty(9)]).unwrap();
        assert_eq!(m.velocity_mae, 0.0);
        assert_eq!(m.patterns, 1);
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let mut c = TrainConfig::default();
        c.corpus_size = 50;
        let (tr, te) = split_corpus(&c).unwrap();
        assert_eq!(te.len(), 5);
        assert_eq!(tr.len(), 45);
    }
}
