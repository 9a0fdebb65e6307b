use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::net::{decoder_backward, decoder_forward, encoder_backward, encoder_forward};
use super::ops::{sigmoid, softplus};
use super::params::ModelWeights;
use crate::error::{Error, Result};
use crate::hvo::{HvoPattern, STEPS};
use crate::scalar::Scalar;

/// Training target: features plus the three ground-truth grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<S> {
    pub steps: usize,
    pub voices: usize,
    /// `[T x 3V]` encoder input.
    pub feats: Vec<S>,
    pub hits: Vec<bool>,
    pub velocities: Vec<S>,
    pub offsets: Vec<S>,
}

impl<S: Scalar> Sample<S> {
    pub fn from_pattern(p: &HvoPattern) -> Self {
        Self {
            steps: STEPS,
            voices: p.voices(),
            feats: p.features().into_iter().map(S::lit).collect(),
            hits: p.hits().to_vec(),
            velocities: p.velocities().iter().map(|&v| S::lit(v)).collect(),
            offsets: p.offsets().iter().map(|&v| S::lit(v)).collect(),
        }
    }

    /// Builds a sample from raw step-major grids of any length.
    pub fn from_grids(steps: usize, voices: usize, hits: Vec<bool>, velocities: Vec<f64>, offsets: Vec<f64>) -> Self {
        let mut feats = vec![S::zero(); steps * 3 * voices];
        for t in 0..steps {
            for j in 0..voices {
                let i = t * voices + j;
                let row = t * 3 * voices;
                feats[row + j] = if hits[i] { S::one() } else { S::zero() };
                feats[row + voices + j] = S::lit(velocities[i]);
                feats[row + 2 * voices + j] = S::lit(offsets[i]);
            }
        }
        Self {
            steps,
            voices,
            feats,
            hits,
            velocities: velocities.into_iter().map(S::lit).collect(),
            offsets: offsets.into_iter().map(S::lit).collect(),
        }
    }
}

/// Loss components, averaged as described on [`loss`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub bce_hits: f64,
    pub mse_vel: f64,
    pub mse_off: f64,
    pub kl: f64,
}

impl LossParts {
    /// Name of the first non-finite component, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("bce_hits", self.bce_hits),
            ("mse_vel", self.mse_vel),
            ("mse_off", self.mse_off),
            ("kl", self.kl),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// KL divergence of `N(mu, exp(log_var))` from the standard normal.
pub fn kl_divergence<S: Scalar>(mu: &[S], log_var: &[S]) -> f64 {
    mu.iter()
        .zip(log_var)
        .map(|(&m, &lv)| {
            let (m, lv) = (m.to_f64_lossy(), lv.to_f64_lossy());
            0.5 * (m * m + lv.exp() - 1.0 - lv)
        })
        .sum()
}

/// Standard normal reparameterization noise for a batch, `[batch x latent]`.
pub(crate) fn batch_noise<S: Scalar>(noise_seed: u64, batch: usize, latent: usize) -> Vec<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    (0..batch * latent)
        .map(|_| {
            let n: f64 = StandardNormal.sample(&mut rng);
            S::lit(n)
        })
        .collect()
}

/// Loss of a batch of patterns.
///
/// `total = bce_hits + mse_vel + mse_off + beta * kl`, where the hit BCE is
/// the mean over every cell, the velocity/offset MSEs are means over
/// ground-truth hit cells of the whole batch (zero when there are none) and
/// `kl` is the per-pattern mean. The latent is sampled with noise drawn from
/// `noise_seed`.
pub fn loss<S: Scalar>(
    weights: &ModelWeights<S>,
    batch: &[HvoPattern],
    noise_seed: u64,
    beta: f64,
) -> Result<LossParts> {
    let samples: Vec<Sample<S>> = batch.iter().map(Sample::from_pattern).collect();
    loss_and_grad(weights, &samples, noise_seed, beta, None)
}

/// Loss of `samples`, optionally accumulating its gradient into `grad`.
pub fn loss_and_grad<S: Scalar>(
    weights: &ModelWeights<S>,
    samples: &[Sample<S>],
    noise_seed: u64,
    beta: f64,
    mut grad: Option<&mut [S]>,
) -> Result<LossParts> {
    let h = *weights.hyper();
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
    }
    if samples.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if let Some(g) = grad.as_deref() {
        if g.len() != weights.param_count() {
            return Err(Error::Config("gradient buffer has the wrong length".into()));
        }
    }
    for s in samples {
        if s.steps != h.steps || s.voices != h.voices {
            return Err(Error::Config(format!(
                "sample is {}x{}, model expects {}x{}",
                s.steps, s.voices, h.steps, h.voices
            )));
        }
    }
    let (t, v, zd) = (h.steps, h.voices, h.latent_dim);
    let b = samples.len();
    let n_cells = (b * t * v) as f64;
    let n_hits = samples
        .iter()
        .map(|s| s.hits.iter().filter(|&&x| x).count())
        .sum::<usize>() as f64;
    let noise = batch_noise::<S>(noise_seed, b, zd);

    let cell_scale = S::lit(1.0 / n_cells);
    let hit_scale = if n_hits > 0.0 { S::lit(1.0 / n_hits) } else { S::zero() };
    let kl_scale = S::lit(beta / b as f64);
    let (half, two) = (S::lit(0.5), S::lit(2.0));

    let mut parts = LossParts::default();
    for (si, s) in samples.iter().enumerate() {
        let eps = &noise[si * zd..(si + 1) * zd];
        let (mu, lv, enc_cache) = encoder_forward(weights, &s.feats);
        let std: Vec<S> = lv.iter().map(|&l| (half * l).exp()).collect();
        let z: Vec<S> = (0..zd).map(|i| mu[i] + std[i] * eps[i]).collect();
        let (out, dec_cache) = decoder_forward(weights, &z);

        let mut dout = vec![S::zero(); t * 3 * v];
        for r in 0..t {
            for j in 0..v {
                let cell = r * v + j;
                let base = r * 3 * v;
                let (lh, lvel, loff) = (out[base + j], out[base + v + j], out[base + 2 * v + j]);
                let y = if s.hits[cell] { S::one() } else { S::zero() };
                parts.bce_hits += (softplus(lh) - y * lh).to_f64_lossy();
                dout[base + j] = (sigmoid(lh) - y) * cell_scale;
                if s.hits[cell] {
                    let pv = sigmoid(lvel);
                    let ev = pv - s.velocities[cell];
                    parts.mse_vel += (ev * ev).to_f64_lossy();
                    dout[base + v + j] = two * ev * pv * (S::one() - pv) * hit_scale;
                    let th = loff.tanh();
                    let eo = half * th - s.offsets[cell];
                    parts.mse_off += (eo * eo).to_f64_lossy();
                    dout[base + 2 * v + j] = two * eo * half * (S::one() - th * th) * hit_scale;
                }
            }
        }
        parts.kl += kl_divergence(&mu, &lv);

        if let Some(g) = grad.as_deref_mut() {
            let dz = decoder_backward(weights, g, &dec_cache, &dout);
            let dmu: Vec<S> = (0..zd).map(|i| dz[i] + kl_scale * mu[i]).collect();
            let dlv: Vec<S> = (0..zd)
                .map(|i| dz[i] * half * std[i] * eps[i] + kl_scale * half * (lv[i].exp() - S::one()))
                .collect();
            encoder_backward(weights, g, &enc_cache, &dmu, &dlv);
        }
    }
    parts.bce_hits /= n_cells;
    if n_hits > 0.0 {
        parts.mse_vel /= n_hits;
        parts.mse_off /= n_hits;
    } else {
        parts.mse_vel = 0.0;
        parts.mse_off = 0.0;
    }
    parts.kl /= b as f64;
    parts.total = parts.bce_hits + parts.mse_vel + parts.mse_off + beta * parts.kl;
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hyperparams;

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.0f64; 16], &[0.0; 16]), 0.0);
        assert!((kl_divergence(&[1.0f64; 16], &[0.0; 16]) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_has_zero_mse_terms() {
        let w = ModelWeights::<f64>::init(Hyperparams::default(), 1).unwrap();
        let parts = loss(&w, &[HvoPattern::empty(9)], 5, 0.1).unwrap();
        assert_eq!(parts.mse_vel, 0.0);
        assert_eq!(parts.mse_off, 0.0);
        assert!(parts.bce_hits > 0.0);
        let expect = parts.bce_hits + 0.1 * parts.kl;
        assert!((parts.total - expect).abs() < 1e-15);
    }

    #[test]
    fn confident_silence_drives_bce_to_zero() {
        // push every hit logit strongly negative through the output bias
        let mut w = ModelWeights::<f64>::init(Hyperparams::default(), 1).unwrap();
        let out_w = w.layout().range("dec.out.w").unwrap();
        let out_b = w.layout().range("dec.out.b").unwrap();
        let vals = w.values_mut();
        vals[out_w].iter_mut().for_each(|x| *x = 0.0);
        for j in 0..9 {
            vals[out_b.start + j] = -60.0;
        }
        let parts = loss(&w, &vec![HvoPattern::empty(9); 2], 0, 0.0).unwrap();
        assert!(parts.bce_hits < 1e-20, "{}", parts.bce_hits);
        assert_eq!(parts.mse_vel, 0.0);
        assert_eq!(parts.mse_off, 0.0);
    }

    #[test]
    fn negative_beta_is_rejected() {
        let w = ModelWeights::<f32>::init(Hyperparams::default(), 1).unwrap();
        assert!(loss(&w, &[HvoPattern::empty(9)], 0, -1.0).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let a = batch_noise::<f64>(3, 2, 4);
        assert_eq!(a, batch_noise::<f64>(3, 2, 4));
        assert_ne!(a, batch_noise::<f64>(4, 2, 4));
    }
}
