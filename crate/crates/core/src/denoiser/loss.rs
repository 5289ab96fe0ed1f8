//! Flow-matching target and the subject-reweighted loss.
//!
//! With per-element squared error `l`, subject indicator `M`, element count `E`
//! and subject count `Eˢ` (reference frame excluded from all of them):
//!
//! `L = mean((1 − M)·l) + λ·(E / Eˢ)·mean(M·l)`, and `L = mean(l)` when `Eˢ = 0`.

use ndarray::{s, Array4, ArrayView4, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use super::model::{lit, Real};
use crate::codec::{LatentBlock, MaskLatent, LATENT_CHANNELS};
use crate::{Error, Result};

/// `x_t = (1 − t)·x0 + t·noise`, target velocity `noise − x0`.
pub fn flow_target(x0: &LatentBlock, noise: &LatentBlock, t: f64) -> Result<(LatentBlock, LatentBlock)> {
    if x0.dim() != noise.dim() {
        return Err(Error::Shape(format!(
            "x0 {:?} and noise {:?} differ",
            x0.dim(),
            noise.dim()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidValue(format!("diffusion time {t} outside [0, 1]")));
    }
    let tf = t as f32;
    let mut xt = Array4::zeros(x0.dim());
    let mut target = Array4::zeros(x0.dim());
    Zip::from(&mut xt)
        .and(&mut target)
        .and(x0.data())
        .and(noise.data())
        .for_each(|xt, v, &a, &n| {
            *xt = (1.0 - tf) * a + tf * n;
            *v = n - a;
        });
    Ok((LatentBlock::new(xt)?, LatentBlock::new(target)?))
}

/// Standard normal noise with the dims of `like`.
pub(crate) fn gaussian_like<R: Rng + ?Sized>(dims: (usize, usize, usize, usize), rng: &mut R) -> LatentBlock {
    let data = Array4::from_shape_simple_fn(dims, || rng.sample::<f32, _>(StandardNormal));
    LatentBlock::new(data).expect("finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Per-element squared error over the video frames.
    pub l_pt: Array4<f64>,
    /// `mean((1 − M)·l)`.
    pub l_background: f64,
    /// `λ·(E / Eˢ)·mean(M·l)`; zero when `Eˢ = 0`.
    pub l_rw: f64,
    pub l_final: f64,
    pub e: usize,
    pub e_s: usize,
}

fn check_mask(dims: (usize, usize, usize, usize), mask: &MaskLatent) -> Result<()> {
    let (f, c, h, w) = dims;
    if c != LATENT_CHANNELS || mask.dim() != (f, 4, h, w) {
        return Err(Error::Shape(format!(
            "loss tensor {dims:?} does not match mask latent {:?}",
            mask.dim()
        )));
    }
    Ok(())
}

/// Per-element weights `w` with `L = Σ w·l / E`, plus `(E, Eˢ)`.
pub fn loss_weights(
    dims: (usize, usize, usize, usize),
    mask: &MaskLatent,
    lambda: f64,
) -> Result<(Array4<f64>, usize, usize)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda = {lambda} must be finite and >= 0")));
    }
    check_mask(dims, mask)?;
    let covered = Array4::from_shape_fn(dims, |(f, c, y, x)| mask.covers(f, c, y, x));
    let e = covered.len();
    let e_s = covered.iter().filter(|&&m| m).count();
    let weights = if e_s == 0 {
        Array4::ones(dims)
    } else {
        let boost = lambda * e as f64 / e_s as f64;
        covered.mapv(|m| if m { boost } else { 1.0 })
    };
    Ok((weights, e, e_s))
}

pub fn reweighted_loss(l_pt: &ArrayView4<f64>, mask: &MaskLatent, lambda: f64) -> Result<LossBreakdown> {
    if l_pt.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidValue("per-element losses must be nonnegative".into()));
    }
    let (_, e, e_s) = loss_weights(l_pt.dim(), mask, lambda)?;
    let mut bg = 0.0;
    let mut fg = 0.0;
    let mut total = 0.0;
    for ((f, c, y, x), &l) in l_pt.indexed_iter() {
        total += l;
        if mask.covers(f, c, y, x) {
            fg += l;
        } else {
            bg += l;
        }
    }
    let en = e as f64;
    let (l_background, l_rw, l_final) = if e_s == 0 {
        (total / en, 0.0, total / en)
    } else {
        let rw = lambda * (en / e_s as f64) * fg / en;
        (bg / en, rw, bg / en + rw)
    };
    Ok(LossBreakdown {
        l_pt: l_pt.to_owned(),
        l_background,
        l_rw,
        l_final,
        e,
        e_s,
    })
}

/// Loss of a full prediction (reference frame included) against the video
/// target, and its gradient w.r.t. the prediction. Temporal indices whose
/// `loss_mask` entry is false are excluded and get zero gradient.
pub fn loss_and_grad<T: Real>(
    prediction: &ArrayView4<T>,
    target: &LatentBlock,
    loss_mask: &[bool],
    mask: &MaskLatent,
    lambda: f64,
) -> Result<(LossBreakdown, Array4<T>)> {
    let (pf, pc, ph, pw) = prediction.dim();
    let frames: Vec<usize> = (0..pf)
        .filter(|&i| loss_mask.get(i).copied().unwrap_or(false))
        .collect();
    if loss_mask.len() != pf
        || frames.len() != target.frames()
        || (pc, ph, pw) != (target.dim().1, target.dim().2, target.dim().3)
    {
        return Err(Error::Shape(format!(
            "prediction {:?} with {} loss frames does not match target {:?}",
            prediction.dim(),
            frames.len(),
            target.dim()
        )));
    }
    let (weights, e, _) = loss_weights(target.dim(), mask, lambda)?;
    let mut l_pt = Array4::<f64>::zeros(target.dim());
    let mut grad = Array4::<T>::zeros(prediction.dim());
    let scale = 2.0 / e as f64;
    for (j, &fi) in frames.iter().enumerate() {
        Zip::from(l_pt.slice_mut(s![j, .., .., ..]))
            .and(grad.slice_mut(s![fi, .., .., ..]))
            .and(prediction.slice(s![fi, .., .., ..]))
            .and(target.data().slice(s![j, .., .., ..]))
            .and(weights.slice(s![j, .., .., ..]))
            .for_each(|l, g, &p, &tv, &w| {
                let d = p.to_f64().expect("finite") - tv as f64;
                *l = d * d;
                *g = lit(scale * w * d);
            });
    }
    let breakdown = reweighted_loss(&l_pt.view(), mask, lambda)?;
    Ok((breakdown, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn mask_with(f: usize, h: usize, w: usize, on: impl Fn(usize, usize, usize, usize) -> bool) -> MaskLatent {
        MaskLatent::new(Array4::from_shape_fn((f, 4, h, w), |(a, b, c, d)| {
            u8::from(on(a, b, c, d))
        }))
        .unwrap()
    }

    #[test]
    fn flow_target_endpoints() {
        let x0 = LatentBlock::new(Array4::from_elem((1, 768, 1, 1), 0.5)).unwrap();
        let n = LatentBlock::new(Array4::from_elem((1, 768, 1, 1), -1.5)).unwrap();
        let (a, v) = flow_target(&x0, &n, 0.0).unwrap();
        assert_eq!(a, x0);
        assert!(v.data().iter().all(|&x| x == -2.0));
        assert_eq!(flow_target(&x0, &n, 1.0).unwrap().0, n);
        assert!(flow_target(&x0, &n, 0.5).unwrap().0.data().iter().all(|&x| x == -0.5));
    }

    #[test]
    fn full_mask_collapses_to_mean() {
        let l = Array4::from_shape_fn((2, 768, 2, 2), |(a, b, c, d)| ((a + b * 3 + c + d) % 7) as f64 * 0.1);
        let r = reweighted_loss(&l.view(), &mask_with(2, 2, 2, |_, _, _, _| true), 1.0).unwrap();
        assert!((r.l_final - l.mean().unwrap()).abs() <= 1e-12);
        assert_eq!(r.e, r.e_s);
    }

    #[test]
    fn quarter_mask_uniform_loss() {
        let l = Array4::from_elem((2, 768, 2, 2), 1.0);
        // one of four spatial cells masked in every slot
        let r = reweighted_loss(&l.view(), &mask_with(2, 2, 2, |_, _, y, x| y == 0 && x == 0), 1.0).unwrap();
        assert_eq!(r.e_s * 4, r.e);
        assert!((r.l_final - 1.75).abs() <= 1e-12, "{}", r.l_final);
    }

    #[test]
    fn empty_mask_skips_reweighting_and_negative_lambda_fails() {
        let l = Array4::from_shape_fn((1, 768, 1, 2), |(_, c, _, x)| (c + x) as f64);
        let m = mask_with(1, 1, 2, |_, _, _, _| false);
        let r = reweighted_loss(&l.view(), &m, 3.0).unwrap();
        assert_eq!(r.l_final, l.mean().unwrap());
        assert!(matches!(reweighted_loss(&l.view(), &m, -0.1), Err(Error::Config(_))));
    }

    #[test]
    fn gradient_is_zero_on_excluded_frames() {
        let pred = Array4::from_shape_fn((3, 768, 1, 1), |(f, c, _, _)| (f * 7 + c) as f64 * 1e-3);
        let target = LatentBlock::zeros(2, 768, 1, 1);
        let m = mask_with(2, 1, 1, |f, s, _, _| f == 1 && s == 2);
        let (_, g) = loss_and_grad(&pred.view(), &target, &[false, true, true], &m, 1.0).unwrap();
        assert!(g.slice(s![0, .., .., ..]).iter().all(|&v| v == 0.0));
        assert!(g.slice(s![1.., .., .., ..]).iter().any(|&v| v != 0.0));
    }
}
