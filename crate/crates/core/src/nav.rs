//! Triangular latent control space spanned by two static references A, B
//! and the live reference R, plus autonomous navigation of the playback point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvo::HvoPattern;
use crate::model::{encode, LatentVec, ModelWeights};
use crate::scalar::Scalar;

/// Playback point P: `alpha` runs along the A–B base, `tau` towards R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrianglePos {
    alpha: f64,
    tau: f64,
}

impl Default for TrianglePos {
    fn default() -> Self {
        Self { alpha: 0.0, tau: 0.0 }
    }
}

impl TrianglePos {
    /// Clamps both coordinates into `[0, 1]`; NaN maps to 0.
    pub fn new(alpha: f64, tau: f64) -> Self {
        Self {
            alpha: clamp01(alpha),
            tau: clamp01(tau),
        }
    }

    /// Strict constructor for control input: out-of-domain values are errors.
    pub fn checked(alpha: f64, tau: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("tau", tau)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Message(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(Self { alpha, tau })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Weights of (A, B, R).
    pub fn weights(&self) -> [f64; 3] {
        let base = 1.0 - self.tau;
        [base * (1.0 - self.alpha), base * self.alpha, self.tau]
    }
}

fn clamp01(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

/// Folds `x` periodically into `[0, 1]` by mirror reflection at both ends.
pub fn reflect(x: f64) -> f64 {
    if !x.is_finite() {
        return 0.5;
    }
    let m = x.rem_euclid(2.0);
    if m > 1.0 {
        2.0 - m
    } else {
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleRefs<S> {
    pub pattern_a: HvoPattern,
    pub pattern_b: HvoPattern,
    pub z_a: LatentVec<S>,
    pub z_b: LatentVec<S>,
    pub z_r: LatentVec<S>,
}

impl<S: Scalar> TriangleRefs<S> {
    pub fn new(
        pattern_a: HvoPattern,
        pattern_b: HvoPattern,
        z_a: LatentVec<S>,
        z_b: LatentVec<S>,
        z_r: LatentVec<S>,
    ) -> Result<Self> {
        let refs = Self {
            pattern_a,
            pattern_b,
            z_a,
            z_b,
            z_r,
        };
        refs.check()?;
        Ok(refs)
    }

    /// Encodes A and B; R starts as the latent of the empty pattern.
    pub fn encode(weights: &ModelWeights<S>, pattern_a: HvoPattern, pattern_b: HvoPattern) -> Result<Self> {
        let z_a = encode(weights, &pattern_a)?.mean();
        let z_b = encode(weights, &pattern_b)?.mean();
        let z_r = encode(weights, &HvoPattern::empty(pattern_a.voices()))?.mean();
        Self::new(pattern_a, pattern_b, z_a, z_b, z_r)
    }

    pub fn dim(&self) -> usize {
        self.z_a.dim()
    }

    fn check(&self) -> Result<()> {
        let d = self.z_a.dim();
        if self.z_b.dim() != d || self.z_r.dim() != d {
            return Err(Error::Config(format!(
                "reference latents differ in length: {}, {}, {}",
                d,
                self.z_b.dim(),
                self.z_r.dim()
            )));
        }
        Ok(())
    }
}

/// Replaces R with the posterior mean of `pattern`.
pub fn set_reference_r<S: Scalar>(
    refs: &TriangleRefs<S>,
    pattern: &HvoPattern,
    weights: &ModelWeights<S>,
) -> Result<TriangleRefs<S>> {
    let z_r = encode(weights, pattern)?.mean();
    let mut out = refs.clone();
    out.z_r = z_r;
    out.check()?;
    Ok(out)
}

fn lerp<S: Scalar>(a: S, b: S, w: f64) -> S {
    if w == 0.0 {
        a
    } else if w == 1.0 {
        b
    } else {
        let w = S::lit(w);
        (S::one() - w) * a + w * b
    }
}

/// `(1 − τ)·((1 − α)·z_a + α·z_b) + τ·z_r`.
///
/// Weights of exactly 0 or 1 select the endpoint without arithmetic, and each
/// coordinate is clamped to the references' range to absorb rounding.
pub fn triangle_interp<S: Scalar>(refs: &TriangleRefs<S>, pos: TrianglePos) -> Result<LatentVec<S>> {
    refs.check()?;
    let (a, b, r) = (refs.z_a.as_slice(), refs.z_b.as_slice(), refs.z_r.as_slice());
    let z = (0..a.len())
        .map(|i| {
            let base = lerp(a[i], b[i], pos.alpha);
            let z = lerp(base, r[i], pos.tau);
            let lo = a[i].min(b[i]).min(r[i]);
            let hi = a[i].max(b[i]).max(r[i]);
            z.max(lo).min(hi)
        })
        .collect();
    Ok(LatentVec(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutonomyMode {
    #[default]
    Off,
    /// τ tracks performer activity, α wanders.
    Follow,
    /// Both coordinates revert towards the centre with noise.
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutonomyState {
    pub mode: AutonomyMode,
    pub pos: TrianglePos,
    pub ema_lambda: f64,
    pub walk_sigma: f64,
    pub ou_theta: f64,
    pub rng_seed: u64,
}

impl Default for AutonomyState {
    fn default() -> Self {
        Self {
            mode: AutonomyMode::Off,
            pos: TrianglePos::default(),
            ema_lambda: 0.5,
            walk_sigma: 0.05,
            ou_theta: 0.5,
            rng_seed: 0,
        }
    }
}

impl AutonomyState {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.walk_sigma) || !ok(self.ou_theta) || !ok(self.ema_lambda) || self.ema_lambda > 1.0 {
            return Err(Error::Config(
                "autonomy parameters must be positive (ema_lambda at most 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Onsets per bar at which the follow heuristic pushes τ all the way to R.
pub const FOLLOW_FULL_ONSETS: f64 = 16.0;

/// One bar of autonomous navigation; `noise` is a pair of standard-normal draws.
pub fn autonomy_step(state: &AutonomyState, onsets_last_bar: usize, noise: (f64, f64)) -> AutonomyState {
    let mut next = state.clone();
    let (alpha, tau) = (state.pos.alpha, state.pos.tau);
    let sigma = state.walk_sigma;
    match state.mode {
        AutonomyMode::Off => {}
        AutonomyMode::Follow => {
            let lambda = state.ema_lambda;
            let target = (onsets_last_bar as f64 / FOLLOW_FULL_ONSETS).clamp(0.0, 1.0);
            next.pos = TrianglePos::new(
                reflect(alpha + sigma * noise.0),
                lambda * tau + (1.0 - lambda) * target,
            );
        }
        AutonomyMode::Drift => {
            let ou = |x: f64, n: f64| reflect(x + state.ou_theta * (0.5 - x) + sigma * n);
            next.pos = TrianglePos::new(ou(alpha, noise.0), ou(tau, noise.1));
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs(a: Vec<f64>, b: Vec<f64>, r: Vec<f64>) -> TriangleRefs<f64> {
        TriangleRefs::new(
            HvoPattern::empty(9),
            HvoPattern::empty(9),
            LatentVec(a),
            LatentVec(b),
            LatentVec(r),
        )
        .unwrap()
    }

    #[test]
    fn hand_evaluated_point() {
        let r = refs(vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 2.0]);
        let z = triangle_interp(&r, TrianglePos::new(0.25, 0.5)).unwrap();
        assert_eq!(z.0, vec![0.5, 1.0]);
    }

    #[test]
    fn corners_are_exact() {
        let r = refs(vec![0.1, -0.3], vec![0.7, 0.2], vec![-0.9, 0.33]);
        assert_eq!(triangle_interp(&r, TrianglePos::new(0.0, 0.0)).unwrap(), r.z_a);
        assert_eq!(triangle_interp(&r, TrianglePos::new(1.0, 0.0)).unwrap(), r.z_b);
        assert_eq!(triangle_interp(&r, TrianglePos::new(0.37, 1.0)).unwrap(), r.z_r);
    }

    #[test]
    fn length_mismatch_is_config_error() {
        let r = TriangleRefs {
            pattern_a: HvoPattern::empty(9),
            pattern_b: HvoPattern::empty(9),
            z_a: LatentVec(vec![0.0f64; 2]),
            z_b: LatentVec(vec![0.0; 3]),
            z_r: LatentVec(vec![0.0; 2]),
        };
        assert!(matches!(triangle_interp(&r, TrianglePos::default()), Err(Error::Config(_))));
    }

    #[test]
    fn position_is_clamped_or_rejected() {
        assert_eq!(TrianglePos::new(-1.0, 2.0), TrianglePos::new(0.0, 1.0));
        assert!(TrianglePos::checked(0.5, 1.2).is_err());
        assert_eq!(TrianglePos::new(0.3, 0.6).weights().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn follow_examples() {
        let s = AutonomyState {
            mode: AutonomyMode::Follow,
            pos: TrianglePos::new(0.5, 0.4),
            ..Default::default()
        };
        assert!((autonomy_step(&s, 0, (0.0, 0.0)).pos.tau() - 0.2).abs() < 1e-15);
        assert!((autonomy_step(&s, 40, (0.0, 0.0)).pos.tau() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn off_is_identity_and_reflect_folds() {
        let s = AutonomyState {
            pos: TrianglePos::new(0.1, 0.9),
            ..Default::default()
        };
        assert_eq!(autonomy_step(&s, 7, (3.0, -2.0)), s);
        assert!((reflect(1.25) - 0.75).abs() < 1e-15);
        assert!((reflect(-0.25) - 0.25).abs() < 1e-15);
        assert!((reflect(2.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn drift_reverts_to_centre_without_noise() {
        let s = AutonomyState {
            mode: AutonomyMode::Drift,
            pos: TrianglePos::new(0.0, 1.0),
            ..Default::default()
        };
        let n = autonomy_step(&s, 0, (0.0, 0.0));
        assert_eq!((n.pos.alpha(), n.pos.tau()), (0.25, 0.75));
    }
}
