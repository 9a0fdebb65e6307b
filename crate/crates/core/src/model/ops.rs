//! Dense kernels with hand-written backward passes.
//!
//! Matrices are row-major. Linear weights are stored `[in x out]` so that the
//! forward pass is a sequence of contiguous axpy updates.

use crate::scalar::Scalar;

pub(crate) const LN_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn axpy<S: Scalar>(y: &mut [S], a: S, x: &[S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent partial sums.
#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (ra, rb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += ra[k] * rb[k];
        }
    }
    let mut tail = S::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y[r] = b + x[r] · W` for every row `r`.
pub(crate) fn linear<S: Scalar>(
    x: &[S],
    rows: usize,
    w: &[S],
    b: Option<&[S]>,
    n_in: usize,
    n_out: usize,
) -> Vec<S> {
    debug_assert_eq!(x.len(), rows * n_in);
    debug_assert_eq!(w.len(), n_in * n_out);
    let mut y = vec![S::zero(); rows * n_out];
    for r in 0..rows {
        let yr = &mut y[r * n_out..(r + 1) * n_out];
        if let Some(b) = b {
            yr.copy_from_slice(b);
        }
        let xr = &x[r * n_in..(r + 1) * n_in];
        for (i, &xi) in xr.iter().enumerate() {
            axpy(yr, xi, &w[i * n_out..(i + 1) * n_out]);
        }
    }
    y
}

/// Accumulates weight/bias gradients and (optionally) input gradients of
/// [`linear`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<S: Scalar>(
    x: &[S],
    dy: &[S],
    rows: usize,
    w: &[S],
    dw: &mut [S],
    db: Option<&mut [S]>,
    dx: Option<&mut [S]>,
    n_in: usize,
    n_out: usize,
) {
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        let xr = &x[r * n_in..(r + 1) * n_in];
        for (i, &xi) in xr.iter().enumerate() {
            axpy(&mut dw[i * n_out..(i + 1) * n_out], xi, dyr);
        }
    }
    if let Some(db) = db {
        for r in 0..rows {
            for (d, &g) in db.iter_mut().zip(&dy[r * n_out..(r + 1) * n_out]) {
                *d += g;
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let dyr = &dy[r * n_out..(r + 1) * n_out];
            let dxr = &mut dx[r * n_in..(r + 1) * n_in];
            for (i, d) in dxr.iter_mut().enumerate() {
                *d += dot(dyr, &w[i * n_out..(i + 1) * n_out]);
            }
        }
    }
}

pub(crate) struct LayerNormCache<S> {
    pub xhat: Vec<S>,
    pub rstd: Vec<S>,
}

/// Per-row layer normalization with gain and bias.
pub(crate) fn layer_norm<S: Scalar>(
    x: &[S],
    rows: usize,
    dim: usize,
    gain: &[S],
    bias: &[S],
) -> (Vec<S>, LayerNormCache<S>) {
    let n = S::lit(dim as f64);
    let eps = S::lit(LN_EPS);
    let mut y = vec![S::zero(); rows * dim];
    let mut xhat = vec![S::zero(); rows * dim];
    let mut rstd = vec![S::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().copied().sum::<S>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let rs = (var + eps).sqrt().recip();
        rstd[r] = rs;
        for i in 0..dim {
            let h = (xr[i] - mean) * rs;
            xhat[r * dim + i] = h;
            y[r * dim + i] = h * gain[i] + bias[i];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

/// Returns the input gradient; accumulates gain/bias gradients.
pub(crate) fn layer_norm_backward<S: Scalar>(
    dy: &[S],
    cache: &LayerNormCache<S>,
    rows: usize,
    dim: usize,
    gain: &[S],
    dgain: &mut [S],
    dbias: &mut [S],
) -> Vec<S> {
    let n = S::lit(dim as f64);
    let mut dx = vec![S::zero(); rows * dim];
    let mut g = vec![S::zero(); dim];
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        for i in 0..dim {
            dgain[i] += dyr[i] * xh[i];
            dbias[i] += dyr[i];
            g[i] = dyr[i] * gain[i];
        }
        let mean_g = g.iter().copied().sum::<S>() / n;
        let mean_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<S>() / n;
        let rs = cache.rstd[r];
        for i in 0..dim {
            dx[r * dim + i] = rs * (g[i] - mean_g - xh[i] * mean_gx);
        }
    }
    dx
}

const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let c = S::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = S::lit(0.5);
    half * x * (S::one() + (c * (x + S::lit(GELU_K) * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = S::lit(0.5);
    let k = S::lit(GELU_K);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + S::lit(3.0) * k * x * x)
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
