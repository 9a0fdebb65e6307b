//! Central finite-difference check of the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Hyperparams;
use super::loss::{loss_and_grad, Sample};
use super::params::ModelWeights;
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub hyper: Hyperparams,
    pub seed: u64,
    pub batch_size: usize,
    pub beta: f64,
    /// Finite-difference step.
    pub step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::tiny(),
            seed: 0,
            batch_size: 3,
            beta: 0.5,
            step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter tensor holding the worst entry.
    pub worst_param: String,
    pub worst_index: usize,
    pub params_checked: usize,
}

/// Random grids of arbitrary size for the tiny model.
pub fn random_samples(hyper: &Hyperparams, n: usize, rng: &mut impl Rng) -> Vec<Sample<f64>> {
    let cells = hyper.steps * hyper.voices;
    (0..n)
        .map(|_| {
            let hits: Vec<bool> = (0..cells).map(|_| rng.random_bool(0.4)).collect();
            let vel = hits
                .iter()
                .map(|&h| if h { rng.random_range(0.2..1.0) } else { 0.0 })
                .collect();
            let off = hits
                .iter()
                .map(|&h| if h { rng.random_range(-0.3..0.3) } else { 0.0 })
                .collect();
            Sample::from_grids(hyper.steps, hyper.voices, hits, vel, off)
        })
        .collect()
}

/// Maximum over all parameters of `|a - n| / max(|a|, |n|, 1e-8)`, comparing
/// the analytic gradient `a` against central differences `n`.
pub fn grad_check(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = ModelWeights::<f64>::init(config.hyper, config.seed)?;
    // move biases and gains away from their trivial initial values
    for v in weights.values_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let samples = random_samples(&config.hyper, config.batch_size, &mut rng);
    let noise_seed = rng.random::<u64>();

    let mut grad = vec![0.0; weights.param_count()];
    loss_and_grad(&weights, &samples, noise_seed, config.beta, Some(&mut grad))?;

    let mut worst = (0.0f64, 0usize);
    for i in 0..weights.param_count() {
        let orig = weights.values()[i];
        weights.values_mut()[i] = orig + config.step;
        let up = loss_and_grad(&weights, &samples, noise_seed, config.beta, None)?.total;
        weights.values_mut()[i] = orig - config.step;
        let down = loss_and_grad(&weights, &samples, noise_seed, config.beta, None)?.total;
        weights.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * config.step);
        let analytic = grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        if rel > worst.0 {
            worst = (rel, i);
        }
    }

    let mut offset = 0;
    let mut name = String::new();
    for spec in weights.layout().specs() {
        if worst.1 < offset + spec.len() {
            name = spec.name.clone();
            break;
        }
        offset += spec.len();
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_param: name,
        worst_index: worst.1,
        params_checked: weights.param_count(),
    })
}
