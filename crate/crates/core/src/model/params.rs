use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::Hyperparams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named tensor in the flat parameter array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Normal with std `1 / sqrt(fan_in)`.
    Fan(usize),
    Zeros,
    Ones,
    Sinusoid,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockIdx {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct NetIdx {
    pub enc_in_w: Range<usize>,
    pub enc_in_b: Range<usize>,
    pub enc_blocks: Vec<BlockIdx>,
    pub enc_lnf_g: Range<usize>,
    pub enc_lnf_b: Range<usize>,
    pub mu_w: Range<usize>,
    pub mu_b: Range<usize>,
    pub lv_w: Range<usize>,
    pub lv_b: Range<usize>,
    pub dec_z_w: Range<usize>,
    pub dec_z_b: Range<usize>,
    pub dec_pos: Range<usize>,
    pub dec_blocks: Vec<BlockIdx>,
    pub dec_lnf_g: Range<usize>,
    pub dec_lnf_b: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
}

/// Manifest of named shapes plus resolved offsets.
#[derive(Debug, Clone)]
pub struct Layout {
    specs: Vec<ParamSpec>,
    inits: Vec<Init>,
    total: usize,
    pub(crate) idx: NetIdx,
}

struct Builder {
    specs: Vec<ParamSpec>,
    inits: Vec<Init>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize], init: Init) -> Range<usize> {
        let spec = ParamSpec {
            name,
            shape: shape.to_vec(),
        };
        let r = self.total..self.total + spec.len();
        self.total = r.end;
        self.specs.push(spec);
        self.inits.push(init);
        r
    }

    fn block(&mut self, prefix: &str, h: &Hyperparams) -> BlockIdx {
        let (d, f) = (h.token_dim, h.ff_dim);
        let mut p = |n: &str, s: &[usize], i: Init| self.push(format!("{prefix}.{n}"), s, i);
        BlockIdx {
            ln1_g: p("ln1.g", &[d], Init::Ones),
            ln1_b: p("ln1.b", &[d], Init::Zeros),
            wq: p("attn.wq", &[d, d], Init::Fan(d)),
            bq: p("attn.bq", &[d], Init::Zeros),
            // no key bias: it shifts every score of a query equally and has no effect
            wk: p("attn.wk", &[d, d], Init::Fan(d)),
            wv: p("attn.wv", &[d, d], Init::Fan(d)),
            bv: p("attn.bv", &[d], Init::Zeros),
            wo: p("attn.wo", &[d, d], Init::Fan(d)),
            bo: p("attn.bo", &[d], Init::Zeros),
            ln2_g: p("ln2.g", &[d], Init::Ones),
            ln2_b: p("ln2.b", &[d], Init::Zeros),
            w1: p("ff.w1", &[d, f], Init::Fan(d)),
            b1: p("ff.b1", &[f], Init::Zeros),
            w2: p("ff.w2", &[f, d], Init::Fan(f)),
            b2: p("ff.b2", &[d], Init::Zeros),
        }
    }
}

impl Layout {
    pub fn new(h: &Hyperparams) -> Self {
        let mut b = Builder {
            specs: Vec::new(),
            inits: Vec::new(),
            total: 0,
        };
        let (t, d, z, fd) = (h.steps, h.token_dim, h.latent_dim, h.feature_dim());
        let enc_in_w = b.push("enc.in.w".into(), &[fd, d], Init::Fan(fd));
        let enc_in_b = b.push("enc.in.b".into(), &[d], Init::Zeros);
        let enc_blocks = (0..h.layers).map(|l| b.block(&format!("enc.l{l}"), h)).collect();
        let enc_lnf_g = b.push("enc.lnf.g".into(), &[d], Init::Ones);
        let enc_lnf_b = b.push("enc.lnf.b".into(), &[d], Init::Zeros);
        let mu_w = b.push("enc.mu.w".into(), &[d, z], Init::Fan(d));
        let mu_b = b.push("enc.mu.b".into(), &[z], Init::Zeros);
        let lv_w = b.push("enc.lv.w".into(), &[d, z], Init::Fan(d));
        let lv_b = b.push("enc.lv.b".into(), &[z], Init::Zeros);
        let dec_z_w = b.push("dec.z.w".into(), &[z, d], Init::Fan(z));
        let dec_z_b = b.push("dec.z.b".into(), &[d], Init::Zeros);
        let dec_pos = b.push("dec.pos".into(), &[t, d], Init::Sinusoid);
        let dec_blocks = (0..h.layers).map(|l| b.block(&format!("dec.l{l}"), h)).collect();
        let dec_lnf_g = b.push("dec.lnf.g".into(), &[d], Init::Ones);
        let dec_lnf_b = b.push("dec.lnf.b".into(), &[d], Init::Zeros);
        let out_w = b.push("dec.out.w".into(), &[d, fd], Init::Fan(d));
        let out_b = b.push("dec.out.b".into(), &[fd], Init::Zeros);
        Self {
            specs: b.specs,
            inits: b.inits,
            total: b.total,
            idx: NetIdx {
                enc_in_w,
                enc_in_b,
                enc_blocks,
                enc_lnf_g,
                enc_lnf_b,
                mu_w,
                mu_b,
                lv_w,
                lv_b,
                dec_z_w,
                dec_z_b,
                dec_pos,
                dec_blocks,
                dec_lnf_g,
                dec_lnf_b,
                out_w,
                out_b,
            },
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        let mut off = 0;
        for s in &self.specs {
            if s.name == name {
                return Some(off..off + s.len());
            }
            off += s.len();
        }
        None
    }
}

/// Fixed sinusoidal position table `[steps x dim]`.
pub(crate) fn sinusoid_table(steps: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; steps * dim];
    for t in 0..steps {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = t as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
            out[t * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

/// Versioned parameter set of the variational model.
#[derive(Debug, Clone)]
pub struct ModelWeights<S> {
    hyper: Hyperparams,
    layout: Layout,
    values: Vec<S>,
}

impl<S: Scalar> PartialEq for ModelWeights<S> {
    fn eq(&self, other: &Self) -> bool {
        self.hyper == other.hyper && self.values == other.values
    }
}

impl<S: Scalar> ModelWeights<S> {
    /// Fresh weights drawn deterministically from `seed`.
    pub fn init(hyper: Hyperparams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let layout = Layout::new(&hyper);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layout.total);
        for (spec, init) in layout.specs.iter().zip(&layout.inits) {
            match *init {
                Init::Fan(fan_in) => {
                    let std = 1.0 / (fan_in as f64).sqrt();
                    for _ in 0..spec.len() {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        values.push(S::lit(n * std));
                    }
                }
                Init::Zeros => values.extend(std::iter::repeat_n(S::zero(), spec.len())),
                Init::Ones => values.extend(std::iter::repeat_n(S::one(), spec.len())),
                Init::Sinusoid => values.extend(
                    sinusoid_table(spec.shape[0], spec.shape[1])
                        .into_iter()
                        .map(S::lit),
                ),
            }
        }
        Ok(Self {
            hyper,
            layout,
            values,
        })
    }

    /// Wraps an existing flat parameter array, checking its length.
    pub fn from_values(hyper: Hyperparams, values: Vec<S>) -> Result<Self> {
        hyper.validate()?;
        let layout = Layout::new(&hyper);
        if values.len() != layout.total {
            return Err(Error::Config(format!(
                "parameter count {} does not match manifest total {}",
                values.len(),
                layout.total
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(Self {
            hyper,
            layout,
            values,
        })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Converts to another scalar type.
    pub fn cast<T: Scalar>(&self) -> ModelWeights<T> {
        ModelWeights {
            hyper: self.hyper,
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| T::lit(v.to_f64_lossy())).collect(),
        }
    }
}
