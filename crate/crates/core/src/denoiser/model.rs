//! Diffusion transformer over fused-input tokens, with hand-written backprop.
//!
//! Tokens are `patch × patch` cells of every channel of the fused tensor. The
//! network is an input projection plus fixed sinusoidal `(t, y, x)` positions,
//! pre-norm transformer blocks with masked multi-head attention, a final norm
//! and a linear head back to `768 · patch²` values per token.
//!
//! The diffusion-time embedding is added to video tokens only, so reference
//! tokens never depend on `t` or on video tokens and their keys/values can be
//! cached across sampling steps.
//!
//! Video-token outputs also receive a mask-gated skip path from the noisy and
//! agnostic streams: `(1 − m)(g0·x_t + g1·a) + m·g2·x_t`, where `m` is the mask
//! channel of each element and the gains `g` are a linear function of the time
//! embedding.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{
    s, Array1, Array2, Array4, ArrayView2, ArrayView4, ArrayViewD, ArrayViewMutD, Axis, LinalgScalar, ScalarOperand,
};
use num_traits::{Float, FromPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DenoiserConfig;
use crate::codec::{LATENT_CHANNELS, SPATIAL_FACTOR, TEMPORAL_FACTOR};
use crate::fusion::{build_attention_mask, groups, FusedInput, TokenLayout, FUSED_CHANNELS};
use crate::{Error, Result};

pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + LinalgScalar
        + ScalarOperand
        + FromPrimitive
        + Debug
        + Send
        + Sync
        + Sum
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + 'static
{
}

#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable")
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `(in, out)`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Linear<T> {
    fn random(fan_in: usize, fan_out: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| {
            let z: f64 = StandardNormal.sample(rng);
            lit(z * std)
        });
        Self {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn forward(&self, x: &ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient if asked.
    fn backward(&self, x: &ArrayView2<T>, dy: &ArrayView2<T>, grad: &mut Self, need_dx: bool) -> Option<Array2<T>> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0));
        need_dx.then(|| dy.dot(&self.w.t()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

struct LnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Real> LayerNorm<T> {
    fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    fn zeros(dim: usize) -> Self {
        Self {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }

    fn forward(&self, x: &ArrayView2<T>) -> (Array2<T>, LnCache<T>) {
        let d = lit::<T>(x.ncols() as f64);
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|&v| v * v).sum::<T>() / d;
            *is = T::one() / (var + lit(LN_EPS)).sqrt();
            row *= *is;
        }
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, LnCache { xhat, inv_std })
    }

    fn backward(&self, cache: &LnCache<T>, dy: &ArrayView2<T>, grad: &mut Self) -> Array2<T> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let d = lit::<T>(dy.ncols() as f64);
        let mut dx = dy * &self.gamma;
        for ((mut row, xh), &is) in dx
            .rows_mut()
            .into_iter()
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let mean_d = row.sum() / d;
            let mean_dx = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
            row.zip_mut_with(&xh, |v, &x| *v = (*v - mean_d - x * mean_dx) * is);
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1: LayerNorm<T>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

/// All learnable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub input: Linear<T>,
    pub time1: Linear<T>,
    pub time2: Linear<T>,
    pub gains: Linear<T>,
    pub blocks: Vec<Block<T>>,
    pub final_ln: LayerNorm<T>,
    pub head: Linear<T>,
}

/// Number of skip gains: background noisy, background agnostic, masked noisy.
pub const SKIP_GAINS: usize = 3;

impl<T: Real> Params<T> {
    pub fn init(cfg: &DenoiserConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.dim;
        let token_in = FUSED_CHANNELS * cfg.patch * cfg.patch;
        let token_out = LATENT_CHANNELS * cfg.patch * cfg.patch;
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let residual = 1.0 / (2.0 * cfg.layers.max(1) as f64).sqrt();
        let input = Linear::random(token_in, d, inv(token_in), &mut rng);
        let time1 = Linear::random(cfg.time_dim, d, inv(cfg.time_dim), &mut rng);
        let time2 = Linear::random(d, d, inv(d), &mut rng);
        let blocks = (0..cfg.layers)
            .map(|_| Block {
                ln1: LayerNorm::new(d),
                q: Linear::random(d, d, inv(d), &mut rng),
                k: Linear::random(d, d, inv(d), &mut rng),
                v: Linear::random(d, d, inv(d), &mut rng),
                o: Linear::random(d, d, inv(d) * residual, &mut rng),
                ln2: LayerNorm::new(d),
                fc1: Linear::random(d, cfg.mlp_ratio * d, inv(d), &mut rng),
                fc2: Linear::random(cfg.mlp_ratio * d, d, inv(cfg.mlp_ratio * d) * residual, &mut rng),
            })
            .collect();
        let head = Linear::random(d, token_out, cfg.head_init_std, &mut rng);
        Self {
            input,
            time1,
            time2,
            gains: Linear::zeros(d, SKIP_GAINS),
            blocks,
            final_ln: LayerNorm::new(d),
            head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let lin = |l: &Linear<T>| Linear::zeros(l.w.nrows(), l.w.ncols());
        let ln = |l: &LayerNorm<T>| LayerNorm::zeros(l.gamma.len());
        Self {
            input: lin(&self.input),
            time1: lin(&self.time1),
            time2: lin(&self.time2),
            gains: lin(&self.gains),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1: ln(&b.ln1),
                    q: lin(&b.q),
                    k: lin(&b.k),
                    v: lin(&b.v),
                    o: lin(&b.o),
                    ln2: ln(&b.ln2),
                    fc1: lin(&b.fc1),
                    fc2: lin(&b.fc2),
                })
                .collect(),
            final_ln: ln(&self.final_ln),
            head: lin(&self.head),
        }
    }

    /// Parameter names in a fixed order, matching [`Params::tensors`].
    pub fn names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        fn push_linear<'a, T>(out: &mut Vec<(String, ArrayViewD<'a, T>)>, name: &str, l: &'a Linear<T>) {
            out.push((format!("{name}.w"), l.w.view().into_dyn()));
            out.push((format!("{name}.b"), l.b.view().into_dyn()));
        }
        fn push_norm<'a, T>(out: &mut Vec<(String, ArrayViewD<'a, T>)>, name: &str, l: &'a LayerNorm<T>) {
            out.push((format!("{name}.gamma"), l.gamma.view().into_dyn()));
            out.push((format!("{name}.beta"), l.beta.view().into_dyn()));
        }
        let mut out = Vec::new();
        push_linear(&mut out, "input", &self.input);
        push_linear(&mut out, "time1", &self.time1);
        push_linear(&mut out, "time2", &self.time2);
        push_linear(&mut out, "gains", &self.gains);
        for (i, b) in self.blocks.iter().enumerate() {
            push_norm(&mut out, &format!("blocks.{i}.ln1"), &b.ln1);
            push_linear(&mut out, &format!("blocks.{i}.attn.q"), &b.q);
            push_linear(&mut out, &format!("blocks.{i}.attn.k"), &b.k);
            push_linear(&mut out, &format!("blocks.{i}.attn.v"), &b.v);
            push_linear(&mut out, &format!("blocks.{i}.attn.o"), &b.o);
            push_norm(&mut out, &format!("blocks.{i}.ln2"), &b.ln2);
            push_linear(&mut out, &format!("blocks.{i}.mlp.fc1"), &b.fc1);
            push_linear(&mut out, &format!("blocks.{i}.mlp.fc2"), &b.fc2);
        }
        push_norm(&mut out, "final_ln", &self.final_ln);
        push_linear(&mut out, "head", &self.head);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        fn push_linear<'a, T>(out: &mut Vec<(String, ArrayViewMutD<'a, T>)>, name: &str, l: &'a mut Linear<T>) {
            out.push((format!("{name}.w"), l.w.view_mut().into_dyn()));
            out.push((format!("{name}.b"), l.b.view_mut().into_dyn()));
        }
        fn push_norm<'a, T>(out: &mut Vec<(String, ArrayViewMutD<'a, T>)>, name: &str, l: &'a mut LayerNorm<T>) {
            out.push((format!("{name}.gamma"), l.gamma.view_mut().into_dyn()));
            out.push((format!("{name}.beta"), l.beta.view_mut().into_dyn()));
        }
        let mut out = Vec::new();
        push_linear(&mut out, "input", &mut self.input);
        push_linear(&mut out, "time1", &mut self.time1);
        push_linear(&mut out, "time2", &mut self.time2);
        push_linear(&mut out, "gains", &mut self.gains);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            push_norm(&mut out, &format!("blocks.{i}.ln1"), &mut b.ln1);
            push_linear(&mut out, &format!("blocks.{i}.attn.q"), &mut b.q);
            push_linear(&mut out, &format!("blocks.{i}.attn.k"), &mut b.k);
            push_linear(&mut out, &format!("blocks.{i}.attn.v"), &mut b.v);
            push_linear(&mut out, &format!("blocks.{i}.attn.o"), &mut b.o);
            push_norm(&mut out, &format!("blocks.{i}.ln2"), &mut b.ln2);
            push_linear(&mut out, &format!("blocks.{i}.mlp.fc1"), &mut b.fc1);
            push_linear(&mut out, &format!("blocks.{i}.mlp.fc2"), &mut b.fc2);
        }
        push_norm(&mut out, "final_ln", &mut self.final_ln);
        push_linear(&mut out, "head", &mut self.head);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Elementwise conversion to another precision.
    pub fn cast<U: Real>(&self) -> Params<U> {
        let conv_lin = |l: &Linear<T>| Linear {
            w: l.w.mapv(|v| lit::<U>(v.to_f64().unwrap())),
            b: l.b.mapv(|v| lit::<U>(v.to_f64().unwrap())),
        };
        let conv_ln = |l: &LayerNorm<T>| LayerNorm {
            gamma: l.gamma.mapv(|v| lit::<U>(v.to_f64().unwrap())),
            beta: l.beta.mapv(|v| lit::<U>(v.to_f64().unwrap())),
        };
        Params {
            input: conv_lin(&self.input),
            time1: conv_lin(&self.time1),
            time2: conv_lin(&self.time2),
            gains: conv_lin(&self.gains),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1: conv_ln(&b.ln1),
                    q: conv_lin(&b.q),
                    k: conv_lin(&b.k),
                    v: conv_lin(&b.v),
                    o: conv_lin(&b.o),
                    ln2: conv_ln(&b.ln2),
                    fc1: conv_lin(&b.fc1),
                    fc2: conv_lin(&b.fc2),
                })
                .collect(),
            final_ln: conv_ln(&self.final_ln),
            head: conv_lin(&self.head),
        }
    }
}

/// `(F, C, h, w)` → `(F·(h/p)·(w/p), C·p²)`; feature index `(c·p + dy)·p + dx`.
pub fn patchify<A: Copy, T: Real>(x: &ArrayView4<A>, p: usize, conv: impl Fn(A) -> T) -> Array2<T> {
    let (f, c, h, w) = x.dim();
    let (gh, gw) = (h / p, w / p);
    let mut out = Array2::zeros((f * gh * gw, c * p * p));
    for fi in 0..f {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let tok = (fi * gh + y / p) * gw + xx / p;
                    let feat = (ci * p + y % p) * p + xx % p;
                    out[[tok, feat]] = conv(x[[fi, ci, y, xx]]);
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(
    tokens: &ArrayView2<T>,
    frames: usize,
    channels: usize,
    h: usize,
    w: usize,
    p: usize,
) -> Array4<T> {
    let (gh, gw) = (h / p, w / p);
    let mut out = Array4::zeros((frames, channels, h, w));
    for fi in 0..frames {
        for ci in 0..channels {
            for y in 0..h {
                for xx in 0..w {
                    let tok = (fi * gh + y / p) * gw + xx / p;
                    let feat = (ci * p + y % p) * p + xx % p;
                    out[[fi, ci, y, xx]] = tokens[[tok, feat]];
                }
            }
        }
    }
    out
}

fn sinusoid_into<T: Real>(out: &mut [T], pos: f64, base: f64) {
    let half = out.len() / 2;
    for i in 0..half {
        let freq = base.powf(-(i as f64) / half.max(1) as f64);
        out[i] = lit((pos * freq).sin());
        out[half + i] = lit((pos * freq).cos());
    }
}

/// Fixed positional embedding `(tokens, dim)`. The dimension is split into
/// temporal, row and column parts; the reference frame has temporal position −1.
pub fn positional_embedding<T: Real>(layout: &TokenLayout, dim: usize) -> Array2<T> {
    let part = (dim / 3) & !1;
    let dt = dim - 2 * part;
    let mut out = Array2::zeros((layout.total_tokens(), dim));
    for (tok, mut row) in out.rows_mut().into_iter().enumerate() {
        let (f, gy, gx) = layout.position(tok);
        let row = row.as_slice_mut().expect("contiguous");
        sinusoid_into(&mut row[..dt], f as f64 - 1.0, 100.0);
        sinusoid_into(&mut row[dt..dt + part], gy as f64, 100.0);
        sinusoid_into(&mut row[dt + part..], gx as f64, 100.0);
    }
    out
}

/// Sinusoidal features of diffusion time `t ∈ [0, 1]`, shape `(1, dim)`.
pub fn time_features<T: Real>(t: f64, dim: usize) -> Array2<T> {
    let mut out = Array2::zeros((1, dim));
    sinusoid_into(out.as_slice_mut().expect("contiguous"), t * 1000.0, 10000.0);
    out
}

fn softmax_row<T: Real>(row: &mut [T], keys: Option<&[usize]>) {
    match keys {
        None => {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Some(keys) => {
            let max = keys.iter().map(|&k| row[k]).fold(T::neg_infinity(), T::max);
            let vals: Vec<T> = keys.iter().map(|&k| (row[k] - max).exp()).collect();
            let sum: T = vals.iter().copied().sum();
            row.iter_mut().for_each(|v| *v = T::zero());
            for (&k, &e) in keys.iter().zip(&vals) {
                row[k] = e / sum;
            }
        }
    }
}

/// Multi-head attention. `allowed[q]` lists the keys query `q` may attend to
/// (`None`: all keys). Forbidden probabilities are exactly zero.
fn attention<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    heads: usize,
    allowed: Option<&[Vec<usize>]>,
) -> (Array2<T>, Vec<Array2<T>>) {
    let dh = q.ncols() / heads;
    let scale = lit::<T>(1.0 / (dh as f64).sqrt());
    let mut out = Array2::zeros((q.nrows(), q.ncols()));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut sc = q.slice(cols).dot(&k.slice(cols).t());
        sc *= scale;
        for (i, mut row) in sc.rows_mut().into_iter().enumerate() {
            softmax_row(
                row.as_slice_mut().expect("contiguous"),
                allowed.map(|a| a[i].as_slice()),
            );
        }
        out.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
        probs.push(sc);
    }
    (out, probs)
}

fn attention_backward<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    probs: &[Array2<T>],
    dout: &Array2<T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let heads = probs.len();
    let dh = q.ncols() / heads;
    let scale = lit::<T>(1.0 / (dh as f64).sqrt());
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let doh = dout.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&doh));
        let mut ds = doh.dot(&v.slice(cols).t());
        for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
            let dot: T = drow.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum();
            drow.zip_mut_with(&prow, |d, &pp| *d = pp * (*d - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}

/// Per-token inputs of a frame range of the fused tensor.
struct TokenInputs<T> {
    tokens: Array2<T>,
    /// Noisy-stream, agnostic-stream and mask values aligned with output features.
    xt: Array2<T>,
    agn: Array2<T>,
    mask: Array2<T>,
}

fn token_inputs<T: Real>(fused: &FusedInput, frames: std::ops::Range<usize>, p: usize) -> TokenInputs<T> {
    let conv = |v: f32| lit::<T>(v as f64);
    let x = fused.tensor.slice(s![frames, .., .., ..]);
    let (f, _, h, w) = x.dim();
    let mut expanded = Array4::<f32>::zeros((f, LATENT_CHANNELS, h, w));
    let cells = SPATIAL_FACTOR * SPATIAL_FACTOR;
    for c in 0..LATENT_CHANNELS {
        let slot = (c / cells) % TEMPORAL_FACTOR;
        expanded
            .slice_mut(s![.., c, .., ..])
            .assign(&x.slice(s![.., groups::MASK.start + slot, .., ..]));
    }
    TokenInputs {
        tokens: patchify(&x, p, conv),
        xt: patchify(&x.slice(s![.., groups::NOISY, .., ..]), p, conv),
        agn: patchify(&x.slice(s![.., groups::AGNOSTIC, .., ..]), p, conv),
        mask: patchify(&expanded.view(), p, conv),
    }
}

/// `(1 − m)(g0·x_t + g1·a) + m·g2·x_t`, added in place.
fn add_skip<T: Real>(y: &mut ndarray::ArrayViewMut2<T>, inp: &TokenInputs<T>, g: &[T]) {
    ndarray::Zip::from(y)
        .and(&inp.xt)
        .and(&inp.agn)
        .and(&inp.mask)
        .for_each(|y, &xt, &a, &m| *y += (T::one() - m) * (g[0] * xt + g[1] * a) + m * g[2] * xt);
}

struct BlockCache<T> {
    n1: Array2<T>,
    ln1: LnCache<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    att: Array2<T>,
    n2: Array2<T>,
    ln2: LnCache<T>,
    u: Array2<T>,
    hidden: Array2<T>,
}

/// Intermediates kept by [`Model::forward_with_cache`] for the backward pass.
pub struct ForwardCache<T> {
    inputs: TokenInputs<T>,
    tfeat: Array2<T>,
    a1: Array2<T>,
    h1: Array2<T>,
    temb: Array2<T>,
    blocks: Vec<BlockCache<T>>,
    nf: Array2<T>,
    lnf: LnCache<T>,
    n_ref: usize,
    dims: (usize, usize, usize, usize),
}

/// Per-layer keys and values of the reference tokens.
pub struct RefCache<T> {
    kv: Vec<(Array2<T>, Array2<T>)>,
    n_ref: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: DenoiserConfig,
    pub params: Params<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: Params::init(&config),
            config,
        })
    }

    fn check(&self, fused: &FusedInput, t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidValue(format!("diffusion time {t} outside [0, 1]")));
        }
        if fused.layout.patch != self.config.patch {
            return Err(Error::Shape(format!(
                "fused input uses patch {}, model expects {}",
                fused.layout.patch, self.config.patch
            )));
        }
        if fused.tensor.dim().1 != FUSED_CHANNELS {
            return Err(Error::Shape(format!(
                "fused input has {} channels, expected {FUSED_CHANNELS}",
                fused.tensor.dim().1
            )));
        }
        if fused.attention_mask.len() != fused.layout.total_tokens() {
            return Err(Error::Shape("attention mask does not match the token layout".into()));
        }
        Ok(())
    }

    fn time_embedding(&self, t: f64) -> (Array2<T>, Array2<T>, Array2<T>, Array2<T>) {
        let tfeat = time_features::<T>(t, self.config.time_dim);
        let a1 = self.params.time1.forward(&tfeat.view());
        let h1 = a1.mapv(silu);
        let temb = self.params.time2.forward(&h1.view());
        (tfeat, a1, h1, temb)
    }

    /// Prediction `(F, 768, h, w)` for every temporal index, reference included.
    pub fn forward(&self, fused: &FusedInput, t: f64) -> Result<Array4<T>> {
        Ok(self.forward_with_cache(fused, t)?.0)
    }

    pub fn forward_with_cache(&self, fused: &FusedInput, t: f64) -> Result<(Array4<T>, ForwardCache<T>)> {
        self.check(fused, t)?;
        let layout = fused.layout;
        let p = self.config.patch;
        let n_ref = layout.ref_tokens();
        let inputs = token_inputs::<T>(fused, 0..layout.frames, p);
        let allowed: Vec<Vec<usize>> = (0..layout.total_tokens())
            .map(|q| fused.attention_mask.allowed_keys(q))
            .collect();

        let mut x = self.params.input.forward(&inputs.tokens.view());
        x += &positional_embedding::<T>(&layout, self.config.dim);
        let (tfeat, a1, h1, temb) = self.time_embedding(t);
        {
            let mut video = x.slice_mut(s![n_ref.., ..]);
            video += &temb.row(0);
        }
        let g = self.params.gains.forward(&temb.view());

        let mut blocks = Vec::with_capacity(self.params.blocks.len());
        for b in &self.params.blocks {
            let (n1, ln1) = b.ln1.forward(&x.view());
            let q = b.q.forward(&n1.view());
            let k = b.k.forward(&n1.view());
            let v = b.v.forward(&n1.view());
            let (att, probs) = attention(&q, &k, &v, self.config.heads, Some(&allowed));
            x += &b.o.forward(&att.view());
            let (n2, ln2) = b.ln2.forward(&x.view());
            let u = b.fc1.forward(&n2.view());
            let hidden = u.mapv(silu);
            x += &b.fc2.forward(&hidden.view());
            blocks.push(BlockCache {
                n1,
                ln1,
                q,
                k,
                v,
                probs,
                att,
                n2,
                ln2,
                u,
                hidden,
            });
        }
        let (nf, lnf) = self.params.final_ln.forward(&x.view());
        let mut y = self.params.head.forward(&nf.view());
        let video_inputs = TokenInputs {
            tokens: Array2::zeros((0, 0)),
            xt: inputs.xt.slice(s![n_ref.., ..]).to_owned(),
            agn: inputs.agn.slice(s![n_ref.., ..]).to_owned(),
            mask: inputs.mask.slice(s![n_ref.., ..]).to_owned(),
        };
        add_skip(
            &mut y.slice_mut(s![n_ref.., ..]),
            &video_inputs,
            g.as_slice().expect("contiguous"),
        );
        let (f, _, h, w) = fused.tensor.dim();
        let out = unpatchify(&y.view(), f, LATENT_CHANNELS, h, w, p);
        let cache = ForwardCache {
            inputs: TokenInputs {
                tokens: inputs.tokens,
                ..video_inputs
            },
            tfeat,
            a1,
            h1,
            temb,
            blocks,
            nf,
            lnf,
            n_ref,
            dims: (f, LATENT_CHANNELS, h, w),
        };
        Ok((out, cache))
    }

    /// Parameter gradients given the gradient of a scalar loss w.r.t. the
    /// prediction returned by [`Model::forward_with_cache`].
    pub fn backward(&self, cache: &ForwardCache<T>, dout: &ArrayView4<T>) -> Params<T> {
        assert_eq!(dout.dim(), cache.dims, "gradient must match the prediction dims");
        let p = self.config.patch;
        let n_ref = cache.n_ref;
        let mut grad = self.params.zeros_like();
        let dy = patchify(dout, p, |v: T| v);

        let mut dg = [T::zero(); SKIP_GAINS];
        ndarray::Zip::from(dy.slice(s![n_ref.., ..]))
            .and(&cache.inputs.xt)
            .and(&cache.inputs.agn)
            .and(&cache.inputs.mask)
            .for_each(|&d, &xt, &a, &m| {
                dg[0] += (T::one() - m) * xt * d;
                dg[1] += (T::one() - m) * a * d;
                dg[2] += m * xt * d;
            });
        let dg = Array2::from_shape_vec((1, SKIP_GAINS), dg.to_vec()).expect("shape");
        let mut dtemb = self
            .params
            .gains
            .backward(&cache.temb.view(), &dg.view(), &mut grad.gains, true)
            .expect("requested");

        let dnf = self
            .params
            .head
            .backward(&cache.nf.view(), &dy.view(), &mut grad.head, true)
            .expect("requested");
        let mut dx = self
            .params
            .final_ln
            .backward(&cache.lnf, &dnf.view(), &mut grad.final_ln);

        for ((b, c), gb) in self
            .params
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(grad.blocks.iter_mut())
            .rev()
        {
            let dhidden = b
                .fc2
                .backward(&c.hidden.view(), &dx.view(), &mut gb.fc2, true)
                .expect("requested");
            let mut du = dhidden;
            du.zip_mut_with(&c.u, |d, &u| *d *= silu_grad(u));
            let dn2 = b
                .fc1
                .backward(&c.n2.view(), &du.view(), &mut gb.fc1, true)
                .expect("requested");
            dx += &b.ln2.backward(&c.ln2, &dn2.view(), &mut gb.ln2);

            let datt =
                b.o.backward(&c.att.view(), &dx.view(), &mut gb.o, true)
                    .expect("requested");
            let (dq, dk, dv) = attention_backward(&c.q, &c.k, &c.v, &c.probs, &datt);
            let mut dn1 =
                b.q.backward(&c.n1.view(), &dq.view(), &mut gb.q, true)
                    .expect("requested");
            dn1 +=
                &b.k.backward(&c.n1.view(), &dk.view(), &mut gb.k, true)
                    .expect("requested");
            dn1 +=
                &b.v.backward(&c.n1.view(), &dv.view(), &mut gb.v, true)
                    .expect("requested");
            dx += &b.ln1.backward(&c.ln1, &dn1.view(), &mut gb.ln1);
        }

        self.params
            .input
            .backward(&cache.inputs.tokens.view(), &dx.view(), &mut grad.input, false);
        dtemb += &dx.slice(s![n_ref.., ..]).sum_axis(Axis(0));
        let mut da1 = self
            .params
            .time2
            .backward(&cache.h1.view(), &dtemb.view(), &mut grad.time2, true)
            .expect("requested");
        da1.zip_mut_with(&cache.a1, |d, &a| *d *= silu_grad(a));
        self.params
            .time1
            .backward(&cache.tfeat.view(), &da1.view(), &mut grad.time1, false);
        grad
    }

    /// Keys and values of the reference tokens at every layer. Valid for every
    /// diffusion time and every video-stream content of the same fused input.
    pub fn ref_cache(&self, fused: &FusedInput) -> Result<RefCache<T>> {
        self.check(fused, 0.0)?;
        if fused.attention_mask != build_attention_mask(&fused.layout) {
            return Err(Error::Config(
                "cached prediction requires the reference-isolating attention mask".into(),
            ));
        }
        let layout = fused.layout;
        let n_ref = layout.ref_tokens();
        let inputs = token_inputs::<T>(fused, 0..1, self.config.patch);
        let mut x = self.params.input.forward(&inputs.tokens.view());
        x += &positional_embedding::<T>(&layout, self.config.dim).slice(s![..n_ref, ..]);
        let mut kv = Vec::with_capacity(self.params.blocks.len());
        for b in &self.params.blocks {
            let (n1, _) = b.ln1.forward(&x.view());
            let q = b.q.forward(&n1.view());
            let k = b.k.forward(&n1.view());
            let v = b.v.forward(&n1.view());
            let (att, _) = attention(&q, &k, &v, self.config.heads, None);
            x += &b.o.forward(&att.view());
            let (n2, _) = b.ln2.forward(&x.view());
            x += &b.fc2.forward(&b.fc1.forward(&n2.view()).mapv(silu).view());
            kv.push((k, v));
        }
        Ok(RefCache { kv, n_ref })
    }

    /// Prediction `(F − 1, 768, h, w)` for the video frames only, reusing cached
    /// reference keys and values.
    pub fn predict_video(&self, fused: &FusedInput, t: f64, cache: &RefCache<T>) -> Result<Array4<T>> {
        self.check(fused, t)?;
        let layout = fused.layout;
        if cache.n_ref != layout.ref_tokens() || cache.kv.len() != self.params.blocks.len() {
            return Err(Error::Shape("reference cache does not match the fused input".into()));
        }
        let p = self.config.patch;
        let n_ref = cache.n_ref;
        let inputs = token_inputs::<T>(fused, 1..layout.frames, p);
        let mut x = self.params.input.forward(&inputs.tokens.view());
        x += &positional_embedding::<T>(&layout, self.config.dim).slice(s![n_ref.., ..]);
        let (_, _, _, temb) = self.time_embedding(t);
        x += &temb.row(0);
        let g = self.params.gains.forward(&temb.view());
        for (b, (k_ref, v_ref)) in self.params.blocks.iter().zip(&cache.kv) {
            let (n1, _) = b.ln1.forward(&x.view());
            let q = b.q.forward(&n1.view());
            let k = ndarray::concatenate(Axis(0), &[k_ref.view(), b.k.forward(&n1.view()).view()]).expect("same width");
            let v = ndarray::concatenate(Axis(0), &[v_ref.view(), b.v.forward(&n1.view()).view()]).expect("same width");
            let (att, _) = attention(&q, &k, &v, self.config.heads, None);
            x += &b.o.forward(&att.view());
            let (n2, _) = b.ln2.forward(&x.view());
            x += &b.fc2.forward(&b.fc1.forward(&n2.view()).mapv(silu).view());
        }
        let (nf, _) = self.params.final_ln.forward(&x.view());
        let mut y = self.params.head.forward(&nf.view());
        add_skip(&mut y.view_mut(), &inputs, g.as_slice().expect("contiguous"));
        let (f, _, h, w) = fused.tensor.dim();
        Ok(unpatchify(&y.view(), f - 1, LATENT_CHANNELS, h, w, p))
    }
}
