//! Encoder and decoder of the variational model with cached activations for
//! backpropagation. Every function works on one sequence at a time.

use std::ops::Range;

use super::config::Hyperparams;
use super::ops::{
    axpy, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward,
    softmax_in_place, LayerNormCache,
};
use super::params::{sinusoid_table, BlockIdx, ModelWeights};
use crate::scalar::Scalar;

/// Log-variance is clamped into this range when produced.
pub const LOG_VAR_MIN: f64 = -8.0;
pub const LOG_VAR_MAX: f64 = 8.0;

/// Mutable views of two disjoint ranges, `a` strictly before `b`.
fn pair_mut<S>(g: &mut [S], a: Range<usize>, b: Range<usize>) -> (&mut [S], &mut [S]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

pub(crate) struct BlockCache<S> {
    ln1: LayerNormCache<S>,
    a: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    /// Attention probabilities `[heads x T x T]`.
    probs: Vec<S>,
    o: Vec<S>,
    ln2: LayerNormCache<S>,
    c: Vec<S>,
    hpre: Vec<S>,
    hact: Vec<S>,
}

fn block_forward<S: Scalar>(
    w: &[S],
    bi: &BlockIdx,
    x: &[S],
    h: &Hyperparams,
) -> (Vec<S>, BlockCache<S>) {
    let (t, d, f, nh, hd) = (h.steps, h.token_dim, h.ff_dim, h.heads, h.head_dim());
    let scale = S::lit(1.0 / (hd as f64).sqrt());

    let (a, ln1) = layer_norm(x, t, d, &w[bi.ln1_g.clone()], &w[bi.ln1_b.clone()]);
    let q = linear(&a, t, &w[bi.wq.clone()], Some(&w[bi.bq.clone()]), d, d);
    let k = linear(&a, t, &w[bi.wk.clone()], None, d, d);
    let v = linear(&a, t, &w[bi.wv.clone()], Some(&w[bi.bv.clone()]), d, d);

    let mut probs = vec![S::zero(); nh * t * t];
    let mut o = vec![S::zero(); t * d];
    for head in 0..nh {
        let cols = head * hd..(head + 1) * hd;
        for i in 0..t {
            let row = &mut probs[(head * t + i) * t..(head * t + i + 1) * t];
            let qi = &q[i * d + cols.start..i * d + cols.end];
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(qi, &k[j * d + cols.start..j * d + cols.end]) * scale;
            }
            softmax_in_place(row);
            let oi = &mut o[i * d + cols.start..i * d + cols.end];
            for (j, &p) in row.iter().enumerate() {
                axpy(oi, p, &v[j * d + cols.start..j * d + cols.end]);
            }
        }
    }
    let att = linear(&o, t, &w[bi.wo.clone()], Some(&w[bi.bo.clone()]), d, d);
    let x1: Vec<S> = x.iter().zip(&att).map(|(&a, &b)| a + b).collect();

    let (c, ln2) = layer_norm(&x1, t, d, &w[bi.ln2_g.clone()], &w[bi.ln2_b.clone()]);
    let hpre = linear(&c, t, &w[bi.w1.clone()], Some(&w[bi.b1.clone()]), d, f);
    let hact: Vec<S> = hpre.iter().map(|&x| gelu(x)).collect();
    let ff = linear(&hact, t, &w[bi.w2.clone()], Some(&w[bi.b2.clone()]), f, d);
    let x2: Vec<S> = x1.iter().zip(&ff).map(|(&a, &b)| a + b).collect();

    (
        x2,
        BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            c,
            hpre,
            hact,
        },
    )
}

/// Backward through one block. Returns the gradient w.r.t. the block input.
fn block_backward<S: Scalar>(
    w: &[S],
    g: &mut [S],
    bi: &BlockIdx,
    cache: &BlockCache<S>,
    dy: &[S],
    h: &Hyperparams,
) -> Vec<S> {
    let (t, d, f, nh, hd) = (h.steps, h.token_dim, h.ff_dim, h.heads, h.head_dim());
    let scale = S::lit(1.0 / (hd as f64).sqrt());

    // feed-forward branch
    let mut dhact = vec![S::zero(); t * f];
    {
        let (dw2, db2) = pair_mut(g, bi.w2.clone(), bi.b2.clone());
        linear_backward(&cache.hact, dy, t, &w[bi.w2.clone()], dw2, Some(db2), Some(&mut dhact), f, d);
    }
    let dhpre: Vec<S> = dhact
        .iter()
        .zip(&cache.hpre)
        .map(|(&dg, &x)| dg * gelu_grad(x))
        .collect();
    let mut dc = vec![S::zero(); t * d];
    {
        let (dw1, db1) = pair_mut(g, bi.w1.clone(), bi.b1.clone());
        linear_backward(&cache.c, &dhpre, t, &w[bi.w1.clone()], dw1, Some(db1), Some(&mut dc), d, f);
    }
    let dx1_ln = {
        let (dg2, db2) = pair_mut(g, bi.ln2_g.clone(), bi.ln2_b.clone());
        layer_norm_backward(&dc, &cache.ln2, t, d, &w[bi.ln2_g.clone()], dg2, db2)
    };
    let dx1: Vec<S> = dy.iter().zip(&dx1_ln).map(|(&a, &b)| a + b).collect();

    // attention branch
    let mut do_ = vec![S::zero(); t * d];
    {
        let (dwo, dbo) = pair_mut(g, bi.wo.clone(), bi.bo.clone());
        linear_backward(&cache.o, &dx1, t, &w[bi.wo.clone()], dwo, Some(dbo), Some(&mut do_), d, d);
    }
    let mut dq = vec![S::zero(); t * d];
    let mut dk = vec![S::zero(); t * d];
    let mut dv = vec![S::zero(); t * d];
    let mut ds = vec![S::zero(); t];
    for head in 0..nh {
        let cols = head * hd..(head + 1) * hd;
        for i in 0..t {
            let p = &cache.probs[(head * t + i) * t..(head * t + i + 1) * t];
            let doi = &do_[i * d + cols.start..i * d + cols.end];
            let mut weighted = S::zero();
            for j in 0..t {
                let vj = &cache.v[j * d + cols.start..j * d + cols.end];
                let dp = dot(doi, vj);
                ds[j] = dp;
                weighted += p[j] * dp;
                axpy(&mut dv[j * d + cols.start..j * d + cols.end], p[j], doi);
            }
            for j in 0..t {
                ds[j] = p[j] * (ds[j] - weighted) * scale;
            }
            let qi = &cache.q[i * d + cols.start..i * d + cols.end];
            for j in 0..t {
                let kj = &cache.k[j * d + cols.start..j * d + cols.end];
                axpy(&mut dq[i * d + cols.start..i * d + cols.end], ds[j], kj);
                axpy(&mut dk[j * d + cols.start..j * d + cols.end], ds[j], qi);
            }
        }
    }
    let mut da = vec![S::zero(); t * d];
    {
        let (dwq, dbq) = pair_mut(g, bi.wq.clone(), bi.bq.clone());
        linear_backward(&cache.a, &dq, t, &w[bi.wq.clone()], dwq, Some(dbq), Some(&mut da), d, d);
    }
    linear_backward(&cache.a, &dk, t, &w[bi.wk.clone()], &mut g[bi.wk.clone()], None, Some(&mut da), d, d);
    {
        let (dwv, dbv) = pair_mut(g, bi.wv.clone(), bi.bv.clone());
        linear_backward(&cache.a, &dv, t, &w[bi.wv.clone()], dwv, Some(dbv), Some(&mut da), d, d);
    }
    let dx_ln = {
        let (dg1, db1) = pair_mut(g, bi.ln1_g.clone(), bi.ln1_b.clone());
        layer_norm_backward(&da, &cache.ln1, t, d, &w[bi.ln1_g.clone()], dg1, db1)
    };
    dx1.iter().zip(&dx_ln).map(|(&a, &b)| a + b).collect()
}

pub(crate) struct EncoderCache<S> {
    feats: Vec<S>,
    blocks: Vec<BlockCache<S>>,
    lnf: LayerNormCache<S>,
    pooled: Vec<S>,
    lv_raw: Vec<S>,
}

/// Posterior mean and clamped log-variance for a `[T x 3V]` feature matrix.
pub(crate) fn encoder_forward<S: Scalar>(
    weights: &ModelWeights<S>,
    feats: &[S],
) -> (Vec<S>, Vec<S>, EncoderCache<S>) {
    let h = weights.hyper();
    let idx = &weights.layout().idx;
    let w = weights.values();
    let (t, d, z, fd) = (h.steps, h.token_dim, h.latent_dim, h.feature_dim());

    let mut x = linear(feats, t, &w[idx.enc_in_w.clone()], Some(&w[idx.enc_in_b.clone()]), fd, d);
    for (xi, pe) in x.iter_mut().zip(sinusoid_table(t, d)) {
        *xi += S::lit(pe);
    }
    let mut blocks = Vec::with_capacity(h.layers);
    for bi in &idx.enc_blocks {
        let (y, c) = block_forward(w, bi, &x, h);
        blocks.push(c);
        x = y;
    }
    let (y, lnf) = layer_norm(&x, t, d, &w[idx.enc_lnf_g.clone()], &w[idx.enc_lnf_b.clone()]);
    let inv_t = S::lit(1.0 / t as f64);
    let mut pooled = vec![S::zero(); d];
    for r in 0..t {
        axpy(&mut pooled, inv_t, &y[r * d..(r + 1) * d]);
    }
    let mu = linear(&pooled, 1, &w[idx.mu_w.clone()], Some(&w[idx.mu_b.clone()]), d, z);
    let lv_raw = linear(&pooled, 1, &w[idx.lv_w.clone()], Some(&w[idx.lv_b.clone()]), d, z);
    let (lo, hi) = (S::lit(LOG_VAR_MIN), S::lit(LOG_VAR_MAX));
    let lv = lv_raw.iter().map(|&v| v.max(lo).min(hi)).collect();
    (
        mu,
        lv,
        EncoderCache {
            feats: feats.to_vec(),
            blocks,
            lnf,
            pooled,
            lv_raw,
        },
    )
}

/// Accumulates encoder parameter gradients from `dmu` and `dlv` (gradients
/// w.r.t. the clamped log-variance).
pub(crate) fn encoder_backward<S: Scalar>(
    weights: &ModelWeights<S>,
    grad: &mut [S],
    cache: &EncoderCache<S>,
    dmu: &[S],
    dlv: &[S],
) {
    let h = weights.hyper();
    let idx = &weights.layout().idx;
    let w = weights.values();
    let (t, d, z, fd) = (h.steps, h.token_dim, h.latent_dim, h.feature_dim());
    let (lo, hi) = (S::lit(LOG_VAR_MIN), S::lit(LOG_VAR_MAX));

    let dlv_raw: Vec<S> = dlv
        .iter()
        .zip(&cache.lv_raw)
        .map(|(&g, &r)| if r < lo || r > hi { S::zero() } else { g })
        .collect();
    let mut dpooled = vec![S::zero(); d];
    {
        let (dw, db) = pair_mut(grad, idx.mu_w.clone(), idx.mu_b.clone());
        linear_backward(&cache.pooled, dmu, 1, &w[idx.mu_w.clone()], dw, Some(db), Some(&mut dpooled), d, z);
    }
    {
        let (dw, db) = pair_mut(grad, idx.lv_w.clone(), idx.lv_b.clone());
        linear_backward(&cache.pooled, &dlv_raw, 1, &w[idx.lv_w.clone()], dw, Some(db), Some(&mut dpooled), d, z);
    }
    let inv_t = S::lit(1.0 / t as f64);
    let mut dy = vec![S::zero(); t * d];
    for r in 0..t {
        axpy(&mut dy[r * d..(r + 1) * d], inv_t, &dpooled);
    }
    let mut dx = {
        let (dg, db) = pair_mut(grad, idx.enc_lnf_g.clone(), idx.enc_lnf_b.clone());
        layer_norm_backward(&dy, &cache.lnf, t, d, &w[idx.enc_lnf_g.clone()], dg, db)
    };
    for (bi, bc) in idx.enc_blocks.iter().zip(&cache.blocks).rev() {
        dx = block_backward(w, grad, bi, bc, &dx, h);
    }
    let (dw, db) = pair_mut(grad, idx.enc_in_w.clone(), idx.enc_in_b.clone());
    linear_backward(&cache.feats, &dx, t, &w[idx.enc_in_w.clone()], dw, Some(db), None, fd, d);
}

pub(crate) struct DecoderCache<S> {
    z: Vec<S>,
    blocks: Vec<BlockCache<S>>,
    lnf: LayerNormCache<S>,
    y: Vec<S>,
}

/// Raw decoder outputs `[T x 3V]`: hit logits, velocity logits and offset
/// pre-activations per step.
pub(crate) fn decoder_forward<S: Scalar>(
    weights: &ModelWeights<S>,
    z: &[S],
) -> (Vec<S>, DecoderCache<S>) {
    let h = weights.hyper();
    let idx = &weights.layout().idx;
    let w = weights.values();
    let (t, d, zd, fd) = (h.steps, h.token_dim, h.latent_dim, h.feature_dim());

    let base = linear(z, 1, &w[idx.dec_z_w.clone()], Some(&w[idx.dec_z_b.clone()]), zd, d);
    let pos = &w[idx.dec_pos.clone()];
    let mut x = vec![S::zero(); t * d];
    for r in 0..t {
        for i in 0..d {
            x[r * d + i] = base[i] + pos[r * d + i];
        }
    }
    let mut blocks = Vec::with_capacity(h.layers);
    for bi in &idx.dec_blocks {
        let (y, c) = block_forward(w, bi, &x, h);
        blocks.push(c);
        x = y;
    }
    let (y, lnf) = layer_norm(&x, t, d, &w[idx.dec_lnf_g.clone()], &w[idx.dec_lnf_b.clone()]);
    let out = linear(&y, t, &w[idx.out_w.clone()], Some(&w[idx.out_b.clone()]), d, fd);
    (
        out,
        DecoderCache {
            z: z.to_vec(),
            blocks,
            lnf,
            y,
        },
    )
}

/// Accumulates decoder gradients and returns the gradient w.r.t. `z`.
pub(crate) fn decoder_backward<S: Scalar>(
    weights: &ModelWeights<S>,
    grad: &mut [S],
    cache: &DecoderCache<S>,
    dout: &[S],
) -> Vec<S> {
    let h = weights.hyper();
    let idx = &weights.layout().idx;
    let w = weights.values();
    let (t, d, zd, fd) = (h.steps, h.token_dim, h.latent_dim, h.feature_dim());

    let mut dy = vec![S::zero(); t * d];
    {
        let (dw, db) = pair_mut(grad, idx.out_w.clone(), idx.out_b.clone());
        linear_backward(&cache.y, dout, t, &w[idx.out_w.clone()], dw, Some(db), Some(&mut dy), d, fd);
    }
    let mut dx = {
        let (dg, db) = pair_mut(grad, idx.dec_lnf_g.clone(), idx.dec_lnf_b.clone());
        layer_norm_backward(&dy, &cache.lnf, t, d, &w[idx.dec_lnf_g.clone()], dg, db)
    };
    for (bi, bc) in idx.dec_blocks.iter().zip(&cache.blocks).rev() {
        dx = block_backward(w, grad, bi, bc, &dx, h);
    }
    let mut dbase = vec![S::zero(); d];
    {
        let dpos = &mut grad[idx.dec_pos.clone()];
        for r in 0..t {
            for i in 0..d {
                dpos[r * d + i] += dx[r * d + i];
                dbase[i] += dx[r * d + i];
            }
        }
    }
    let mut dz = vec![S::zero(); zd];
    let (dw, db) = pair_mut(grad, idx.dec_z_w.clone(), idx.dec_z_b.clone());
    linear_backward(&cache.z, &dbase, 1, &w[idx.dec_z_w.clone()], dw, Some(db), Some(&mut dz), zd, d);
    dz
}
