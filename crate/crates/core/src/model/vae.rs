use serde::{Deserialize, Serialize};

use super::net::{decoder_forward, encoder_forward};
use super::ops::sigmoid;
use super::params::ModelWeights;
use crate::error::{Error, Result};
use crate::hvo::{HvoPattern, MAX_OFFSET, STEPS};
use crate::scalar::Scalar;
use crate::transport::VoiceGrouping;

/// A point in latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentVec<S>(pub Vec<S>);

impl<S: Scalar> LatentVec<S> {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![S::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Diagonal Gaussian posterior produced by the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian<S> {
    pub mu: Vec<S>,
    pub log_var: Vec<S>,
}

impl<S: Scalar> LatentGaussian<S> {
    pub fn mean(&self) -> LatentVec<S> {
        LatentVec(self.mu.clone())
    }
}

/// Decoder outputs after their output nonlinearities.
///
/// Grids are step-major `[steps x voices]`. Probabilities and velocities are
/// kept strictly inside `(0, 1)` and offsets strictly inside `(-0.5, 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedGrids {
    pub steps: usize,
    pub voices: usize,
    pub hit_probs: Vec<f64>,
    pub velocities: Vec<f64>,
    pub offsets: Vec<f64>,
}

const PROB_EPS: f64 = 1e-12;

/// Per-channel hit density controls; a hit survives when its probability is
/// at least `1 - density` of its channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DensityMap(Vec<f64>);

impl DensityMap {
    pub const DEFAULT: f64 = 0.5;

    pub fn uniform(groups: usize, value: f64) -> Result<Self> {
        check_density(value)?;
        Ok(Self(vec![value; groups]))
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        for &v in &values {
            check_density(v)?;
        }
        Ok(Self(values))
    }

    pub fn groups(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, group: usize) -> f64 {
        self.0[group]
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn set(&mut self, group: usize, value: f64) -> Result<()> {
        check_density(value)?;
        let n = self.0.len();
        let slot = self
            .0
            .get_mut(group)
            .ok_or_else(|| Error::Config(format!("density group {group} out of range ({n} groups)")))?;
        *slot = value;
        Ok(())
    }

    pub fn threshold(&self, group: usize) -> f64 {
        1.0 - self.0[group]
    }
}

fn check_density(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("density {v} outside [0, 1]")));
    }
    Ok(())
}

fn check_pattern_dims<S: Scalar>(weights: &ModelWeights<S>, pattern: &HvoPattern) -> Result<()> {
    let h = weights.hyper();
    if h.steps != STEPS || h.voices != pattern.voices() {
        return Err(Error::Config(format!(
            "pattern is {STEPS}x{}, model expects {}x{}",
            pattern.voices(),
            h.steps,
            h.voices
        )));
    }
    Ok(())
}

/// Posterior parameters for `pattern`. Deterministic: no sampling happens here.
pub fn encode<S: Scalar>(weights: &ModelWeights<S>, pattern: &HvoPattern) -> Result<LatentGaussian<S>> {
    check_pattern_dims(weights, pattern)?;
    let feats: Vec<S> = pattern.features().into_iter().map(S::lit).collect();
    let (mu, log_var, _) = encoder_forward(weights, &feats);
    Ok(LatentGaussian { mu, log_var })
}

/// `z = mu + exp(log_var / 2) * noise`.
pub fn reparameterize<S: Scalar>(g: &LatentGaussian<S>, noise: &[S]) -> Result<LatentVec<S>> {
    if noise.len() != g.mu.len() || g.log_var.len() != g.mu.len() {
        return Err(Error::Config(format!(
            "noise has {} entries, latent has {}",
            noise.len(),
            g.mu.len()
        )));
    }
    let half = S::lit(0.5);
    Ok(LatentVec(
        g.mu.iter()
            .zip(&g.log_var)
            .zip(noise)
            .map(|((&m, &lv), &n)| m + (half * lv).exp() * n)
            .collect(),
    ))
}

pub fn decode_logits<S: Scalar>(weights: &ModelWeights<S>, z: &LatentVec<S>) -> Result<DecodedGrids> {
    let h = *weights.hyper();
    if z.dim() != h.latent_dim {
        return Err(Error::Config(format!(
            "latent has {} entries, model expects {}",
            z.dim(),
            h.latent_dim
        )));
    }
    let (out, _) = decoder_forward(weights, z.as_slice());
    let (t, v) = (h.steps, h.voices);
    let mut grids = DecodedGrids {
        steps: t,
        voices: v,
        hit_probs: Vec::with_capacity(t * v),
        velocities: Vec::with_capacity(t * v),
        offsets: Vec::with_capacity(t * v),
    };
    for r in 0..t {
        let row = &out[r * 3 * v..(r + 1) * 3 * v];
        for j in 0..v {
            let p = sigmoid(row[j].to_f64_lossy());
            let vel = sigmoid(row[v + j].to_f64_lossy());
            let off = 0.5 * row[2 * v + j].to_f64_lossy().tanh();
            grids.hit_probs.push(p.clamp(PROB_EPS, 1.0 - PROB_EPS));
            grids.velocities.push(vel.clamp(PROB_EPS, 1.0 - PROB_EPS));
            grids.offsets.push(off.clamp(-MAX_OFFSET, MAX_OFFSET));
        }
    }
    Ok(grids)
}

/// Thresholds decoded probabilities per channel density; attributes are
/// copied at hit cells and zeroed elsewhere.
pub fn extract_pattern(
    grids: &DecodedGrids,
    densities: &DensityMap,
    grouping: &VoiceGrouping,
) -> Result<HvoPattern> {
    if grids.steps != STEPS {
        return Err(Error::Config(format!("decoded grid has {} steps", grids.steps)));
    }
    grouping.check_voices(grids.voices)?;
    if densities.groups() != grouping.channels() {
        return Err(Error::Config(format!(
            "{} densities for {} channels",
            densities.groups(),
            grouping.channels()
        )));
    }
    let v = grids.voices;
    let mut p = HvoPattern::empty(v);
    for t in 0..STEPS {
        for j in 0..v {
            let i = t * v + j;
            if grids.hit_probs[i] >= densities.threshold(grouping.channel_of(j)) {
                p.set_hit(t, j, grids.velocities[i], grids.offsets[i]);
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hyperparams;

    fn grids_with(probs: Vec<f64>, voices: usize) -> DecodedGrids {
        let n = probs.len();
        DecodedGrids {
            steps: STEPS,
            voices,
            hit_probs: probs,
            velocities: vec![0.7; n],
            offsets: vec![0.1; n],
        }
    }

    #[test]
    fn reparameterize_examples() {
        let g = LatentGaussian {
            mu: vec![1.0f64; 4],
            log_var: vec![2.0 * 2f64.ln(); 4],
        };
        let z = reparameterize(&g, &[0.5; 4]).unwrap();
        for v in z.0 {
            assert!((v - 2.0).abs() < 1e-12);
        }
        let z0 = reparameterize(&g, &[0.0; 4]).unwrap();
        assert_eq!(z0.0, g.mu);
        let unit = LatentGaussian {
            mu: vec![0.3f64, -0.2],
            log_var: vec![0.0, 0.0],
        };
        assert_eq!(reparameterize(&unit, &[0.25, 0.5]).unwrap().0, vec![0.55, 0.3]);
        assert!(reparameterize(&unit, &[0.0]).is_err());
    }

    #[test]
    fn encode_shape_and_determinism() {
        let w = ModelWeights::<f32>::init(Hyperparams::default(), 3).unwrap();
        let mut p = HvoPattern::empty(9);
        p.set_hit(0, 0, 0.9, 0.0);
        p.set_hit(4, 1, 0.7, 0.05);
        let a = encode(&w, &p).unwrap();
        let b = encode(&w, &p).unwrap();
        assert_eq!(a.mu.len(), 16);
        assert_eq!(a.log_var.len(), 16);
        assert_eq!(a, b);
        assert!(a.mu.iter().chain(&a.log_var).all(|v| v.is_finite()));
        assert!(encode(&w, &HvoPattern::empty(4)).is_err());
    }

    #[test]
    fn decode_ranges_and_determinism() {
        let w = ModelWeights::<f32>::init(Hyperparams::default(), 3).unwrap();
        let z = LatentVec(vec![0.4f32; 16]);
        let a = decode_logits(&w, &z).unwrap();
        let b = decode_logits(&w, &z).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hit_probs.len(), 32 * 9);
        assert!(a.hit_probs.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(a.velocities.iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(a.offsets.iter().all(|&o| o > -0.5 && o < 0.5));
        assert!(decode_logits(&w, &LatentVec(vec![0.0f32; 3])).is_err());
        // huge latents saturate the logistic but stay strictly inside the range
        let big = decode_logits(&w, &LatentVec(vec![1e4f32; 16])).unwrap();
        assert!(big.hit_probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn density_boundaries() {
        let g = grids_with(vec![1.0 - 1e-12; STEPS * 2], 2);
        let grouping = VoiceGrouping::identity(2);
        let none = extract_pattern(&g, &DensityMap::uniform(2, 0.0).unwrap(), &grouping).unwrap();
        assert_eq!(none.hit_count(), 0);
        let g = grids_with(vec![1e-12; STEPS * 2], 2);
        let all = extract_pattern(&g, &DensityMap::uniform(2, 1.0).unwrap(), &grouping).unwrap();
        assert_eq!(all.hit_count(), STEPS * 2);
    }

    #[test]
    fn density_threshold_half() {
        let mut probs = vec![0.1; STEPS * 2];
        probs[0] = 0.6;
        probs[1] = 0.4;
        let g = grids_with(probs, 2);
        let p = extract_pattern(&g, &DensityMap::uniform(2, 0.5).unwrap(), &VoiceGrouping::identity(2)).unwrap();
        assert!(p.hit(0, 0));
        assert!(!p.hit(0, 1));
        assert_eq!(p.velocity(0, 0), 0.7);
        assert_eq!(p.velocity(0, 1), 0.0);
        assert_eq!(p.offset(0, 1), 0.0);
    }

    #[test]
    fn density_values_are_validated() {
        assert!(DensityMap::uniform(2, 1.5).is_err());
        let mut d = DensityMap::uniform(2, 0.5).unwrap();
        assert!(d.set(2, 0.1).is_err());
        assert!(d.set(0, -0.1).is_err());
        d.set(1, 0.9).unwrap();
        assert_eq!(d.get(1), 0.9);
    }
}
