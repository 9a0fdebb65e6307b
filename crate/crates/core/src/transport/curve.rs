use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform cyclic Catmull-Rom spline through one knot per step, clamped to
/// the knots' range so it never overshoots the per-step values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationCurve<S> {
    knots: Vec<S>,
    samples_per_step: usize,
    lo: S,
    hi: S,
}

impl<S: Scalar> ModulationCurve<S> {
    pub fn knots(&self) -> &[S] {
        &self.knots
    }

    pub fn samples_per_step(&self) -> usize {
        self.samples_per_step
    }

    pub fn len(&self) -> usize {
        self.knots.len() * self.samples_per_step
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Value at `x` in step units; wraps cyclically.
    pub fn eval(&self, x: S) -> S {
        let n = self.knots.len();
        let period = S::lit(n as f64);
        let mut x = x % period;
        if x < S::zero() {
            x += period;
        }
        let i = x.floor().to_usize().unwrap_or(0).min(n - 1);
        let u = x - S::lit(i as f64);
        let k = |j: isize| self.knots[(i as isize + j).rem_euclid(n as isize) as usize];
        let (p0, p1, p2, p3) = (k(-1), k(0), k(1), k(2));
        let (two, three, four, five) = (S::lit(2.0), S::lit(3.0), S::lit(4.0), S::lit(5.0));
        let v = S::lit(0.5)
            * (two * p1
                + (p2 - p0) * u
                + (two * p0 - five * p1 + four * p2 - p3) * u * u
                + (three * p1 - p0 - three * p2 + p3) * u * u * u);
        v.max(self.lo).min(self.hi)
    }

    /// Sample `j` of `len()`; index `len()` wraps to sample 0.
    pub fn sample(&self, j: usize) -> S {
        let j = j % self.len();
        let (i, r) = (j / self.samples_per_step, j % self.samples_per_step);
        if r == 0 {
            return self.knots[i];
        }
        self.eval(S::lit(i as f64) + S::lit(r as f64) / S::lit(self.samples_per_step as f64))
    }

    pub fn samples(&self) -> Vec<S> {
        (0..self.len()).map(|j| self.sample(j)).collect()
    }
}

pub fn fit_modulation_curve<S: Scalar>(values: &[S], samples_per_step: usize) -> Result<ModulationCurve<S>> {
    if samples_per_step == 0 {
        return Err(Error::Config("samples_per_step must be at least 1".into()));
    }
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("curve needs finite knot values".into()));
    }
    let lo = values.iter().copied().fold(S::infinity(), S::min);
    let hi = values.iter().copied().fold(S::neg_infinity(), S::max);
    Ok(ModulationCurve {
        knots: values.to_vec(),
        samples_per_step,
        lo,
        hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let c = fit_modulation_curve(&[0.5f64; 32], 8).unwrap();
        assert_eq!(c.len(), 256);
        assert!(c.samples().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn passes_through_knots_and_wraps() {
        let vals: Vec<f64> = (0..32).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let c = fit_modulation_curve(&vals, 5).unwrap();
        let s = c.samples();
        for (i, &v) in vals.iter().enumerate() {
            assert!((s[i * 5] - v).abs() < 1e-12);
            assert!((c.eval(i as f64) - v).abs() < 1e-12);
        }
        assert_eq!(c.sample(c.len()), c.sample(0));
        assert!((c.eval(32.0) - c.eval(0.0)).abs() < 1e-12);
        assert!((c.eval(-0.5) - c.eval(31.5)).abs() < 1e-12);
    }

    #[test]
    fn single_spike_does_not_overshoot() {
        let mut vals = vec![0.0f32; 32];
        vals[4] = 0.9;
        let c = fit_modulation_curve(&vals, 16).unwrap();
        let s = c.samples();
        assert_eq!(s.iter().copied().fold(f32::MIN, f32::max), 0.9);
        assert!(s.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_modulation_curve::<f64>(&[], 4).is_err());
        assert!(fit_modulation_curve(&[1.0f64], 0).is_err());
    }
}
