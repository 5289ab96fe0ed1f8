//! Proxy metrics for background preservation and reference appearance.
//!
//! Both scores lie in `[0, 1]` and are exactly 1 for identical inputs. The
//! formulas are fixed and versioned by [`METRIC_VERSION`].

use ndarray::{Array2, ArrayView2, ArrayView3};

use crate::mask_augment::bbox_of;
use crate::video::{MaskSequence, ReferenceImage, VideoClip};
use crate::{Error, Result};

pub const METRIC_VERSION: &str = "proxy-v1";
pub const PSNR_CAP_DB: f64 = 50.0;
pub const DEFAULT_DILATION: usize = 8;
pub const COLOR_BINS: usize = 8;
pub const ORIENTATION_BINS: usize = 16;

/// Square (Chebyshev) dilation of a binary frame by `radius` pixels.
pub fn dilate(frame: &ArrayView2<u8>, radius: usize) -> Array2<u8> {
    let (h, w) = frame.dim();
    // Separable: rows then columns.
    let mut rows = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius + 1).min(w);
            rows[[y, x]] = u8::from((lo..hi).any(|xx| frame[[y, xx]] != 0));
        }
    }
    let mut out = Array2::<u8>::zeros((h, w));
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius + 1).min(h);
        for x in 0..w {
            out[[y, x]] = u8::from((lo..hi).any(|yy| rows[[yy, x]] != 0));
        }
    }
    out
}

/// PSNR in dB for unit peak; infinite when `mse == 0`.
pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn check_dims(a: &VideoClip, b: &VideoClip, mask: &MaskSequence) -> Result<()> {
    if a.data().dim() != b.data().dim() || !a.same_dims(mask) {
        return Err(Error::Shape(format!(
            "metric inputs differ: {:?} vs {:?} with mask {:?}",
            a.data().dim(),
            b.data().dim(),
            mask.data().dim()
        )));
    }
    Ok(())
}

/// Per-frame PSNR outside the mask dilated by `dilation`, capped at 50 dB and
/// divided by 50, averaged over frames that have background pixels. `None`
/// when no frame has any.
pub fn background_preservation(
    source: &VideoClip,
    output: &VideoClip,
    mask: &MaskSequence,
    dilation: usize,
) -> Result<Option<f64>> {
    check_dims(source, output, mask)?;
    let mut scores = Vec::new();
    for t in 0..source.frames() {
        let grown = dilate(&mask.frame(t), dilation);
        let (s, o) = (source.frame(t), output.frame(t));
        let (mut sum, mut n) = (0.0f64, 0usize);
        for ((c, y, x), &v) in s.indexed_iter() {
            if grown[[y, x]] == 0 {
                let d = v as f64 - o[[c, y, x]] as f64;
                sum += d * d;
                n += 1;
            }
        }
        if n > 0 {
            scores.push(psnr(sum / n as f64).min(PSNR_CAP_DB) / PSNR_CAP_DB);
        }
    }
    Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
}

/// PSNR over every masked pixel of the clip (all frames pooled), uncapped.
pub fn masked_psnr(truth: &VideoClip, output: &VideoClip, mask: &MaskSequence) -> Result<f64> {
    check_dims(truth, output, mask)?;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for ((t, c, y, x), &v) in truth.data().indexed_iter() {
        if mask.data()[[t, y, x]] != 0 {
            let d = v as f64 - output.data()[[t, c, y, x]] as f64;
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoSubject);
    }
    Ok(psnr(sum / n as f64))
}

/// Weighted appearance descriptor of one subject crop.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    /// Normalized to sum 1, or all zero when the weights are all zero.
    pub color: Vec<f64>,
    /// Magnitude-weighted gradient orientations, unnormalized.
    pub orientation: Vec<f64>,
}

impl Appearance {
    /// `image` is `(3, H, W)` in `[0, 1]`; `weights` is `(H, W)` in `[0, 1]`.
    pub fn of(image: &ArrayView3<f32>, weights: &ArrayView2<f32>) -> Self {
        let (_, h, w) = image.dim();
        let mut color = vec![0.0; COLOR_BINS.pow(3)];
        let bin = |v: f32| ((v.clamp(0.0, 1.0) * COLOR_BINS as f32) as usize).min(COLOR_BINS - 1);
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                let wt = weights[[y, x]] as f64;
                if wt > 0.0 {
                    let idx = (bin(image[[0, y, x]]) * COLOR_BINS + bin(image[[1, y, x]])) * COLOR_BINS
                        + bin(image[[2, y, x]]);
                    color[idx] += wt;
                    total += wt;
                }
            }
        }
        if total > 0.0 {
            color.iter_mut().for_each(|c| *c /= total);
        }

        let gray = |y: usize, x: usize| -> f64 {
            (image[[0, y, x]] as f64 + image[[1, y, x]] as f64 + image[[2, y, x]] as f64) / 3.0
        };
        let mut orientation = vec![0.0; ORIENTATION_BINS];
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let wt = weights[[y, x]] as f64;
                if wt == 0.0 {
                    continue;
                }
                let gx = (gray(y, x + 1) - gray(y, x - 1)) / 2.0;
                let gy = (gray(y + 1, x) - gray(y - 1, x)) / 2.0;
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                let b = ((angle / std::f64::consts::TAU * ORIENTATION_BINS as f64).round() as usize) % ORIENTATION_BINS;
                orientation[b] += wt * mag;
            }
        }
        Self { color, orientation }
    }

    /// `0.5·histogram intersection + 0.5·orientation cosine`. Two flat
    /// descriptors have cosine 1; a flat and a textured one have cosine 0.
    pub fn similarity(&self, other: &Self) -> f64 {
        let inter: f64 = self.color.iter().zip(&other.color).map(|(a, b)| a.min(*b)).sum();
        let dot: f64 = self
            .orientation
            .iter()
            .zip(&other.orientation)
            .map(|(a, b)| a * b)
            .sum();
        let na = self.orientation.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = other.orientation.iter().map(|b| b * b).sum::<f64>().sqrt();
        let cosine = match (na > 0.0, nb > 0.0) {
            (true, true) => (dot / (na * nb)).clamp(0.0, 1.0),
            (false, false) => 1.0,
            _ => 0.0,
        };
        (0.5 * inter.min(1.0) + 0.5 * cosine).clamp(0.0, 1.0)
    }
}

/// Mean over frames with a nonempty mask of the similarity between the
/// reference subject and the output's masked bounding-box crop.
pub fn reference_appearance(reference: &ReferenceImage, output: &VideoClip, mask: &MaskSequence) -> Result<f64> {
    if !output.same_dims(mask) {
        return Err(Error::Shape("output and mask differ in size".into()));
    }
    let r = Appearance::of(&reference.image().view(), &reference.weights().view());
    let mut scores = Vec::new();
    for t in 0..mask.frames() {
        let Some(b) = bbox_of(mask.frame(t)) else { continue };
        let frame = output.frame(t);
        let crop = frame.slice(ndarray::s![.., b.y0..b.y1, b.x0..b.x1]);
        let weights = mask.frame(t).slice(ndarray::s![b.y0..b.y1, b.x0..b.x1]).mapv(f32::from);
        scores.push(r.similarity(&Appearance::of(&crop, &weights.view())));
    }
    if scores.is_empty() {
        return Err(Error::NoSubject);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Array3, Array4};

    fn clip(v: f32) -> VideoClip {
        VideoClip::new(Array4::from_elem((3, 3, 32, 32), v)).unwrap()
    }

    fn center_mask() -> MaskSequence {
        let mut m = Array3::zeros((3, 32, 32));
        m.slice_mut(s![.., 12..20, 12..20]).fill(1);
        MaskSequence::new(m).unwrap()
    }

    #[test]
    fn identical_background_scores_one() {
        let a = clip(0.5);
        assert_eq!(background_preservation(&a, &a, &center_mask(), 8).unwrap(), Some(1.0));
    }

    #[test]
    fn uniform_shift_gives_twenty_db() {
        let s = background_preservation(&clip(0.5), &clip(0.6), &center_mask(), 8)
            .unwrap()
            .unwrap();
        // mse = 0.01 in f32 arithmetic; 20 dB maps to 0.4.
        assert!((s - 0.4).abs() < 1e-6, "{s}");
    }

    #[test]
    fn full_frame_after_dilation_is_skipped() {
        let mut m = Array3::zeros((3, 32, 32));
        m.slice_mut(s![.., 8..24, 8..24]).fill(1);
        let m = MaskSequence::new(m).unwrap();
        assert_eq!(background_preservation(&clip(0.5), &clip(0.1), &m, 8).unwrap(), None);
    }

    #[test]
    fn dilation_is_square() {
        let mut f = Array2::zeros((9, 9));
        f[[4, 4]] = 1;
        let d = dilate(&f.view(), 2);
        assert_eq!(d.sum(), 25);
        assert_eq!(d[[2, 2]], 1);
        assert_eq!(d[[1, 4]], 0);
    }

    fn textured() -> Array3<f32> {
        Array3::from_shape_fn((3, 16, 16), |(c, y, x)| {
            let v = (x as f32 / 15.0) * 0.7 + ((y / 4) % 2) as f32 * 0.2 + c as f32 * 0.03;
            v.clamp(0.0, 1.0)
        })
    }

    #[test]
    fn rotation_keeps_color_but_changes_gradients() {
        let img = textured();
        let rot = Array3::from_shape_fn((3, 16, 16), |(c, y, x)| img[[c, 15 - x, y]]);
        let ones = Array2::ones((16, 16));
        let a = Appearance::of(&img.view(), &ones.view());
        let b = Appearance::of(&rot.view(), &ones.view());
        let inter: f64 = a.color.iter().zip(&b.color).map(|(x, y)| x.min(*y)).sum();
        assert!((inter - 1.0).abs() < 1e-12);
        let s = a.similarity(&b);
        assert!(s < 1.0 && s >= 0.5, "{s}");
        assert!((a.similarity(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gray_is_the_worst_probe() {
        let img = textured();
        let reference = ReferenceImage::new(img.clone(), None).unwrap();
        let ones = Array2::ones((16, 16));
        let r = Appearance::of(&img.view(), &ones.view());
        let probes = [
            img.clone(),
            img.mapv(|v| (v + 0.1).min(1.0)),
            Array3::from_shape_fn((3, 16, 16), |(c, y, x)| img[[c, y, 15 - x]]),
            Array3::from_elem((3, 16, 16), 0.5),
        ];
        let scores: Vec<f64> = probes
            .iter()
            .map(|p| r.similarity(&Appearance::of(&p.view(), &ones.view())))
            .collect();
        let gray = scores[3];
        assert!(scores[..3].iter().all(|&s| s > gray), "{scores:?}");

        // Whole-clip form: the subject crop identical to the reference scores 1.
        let mut data = Array4::from_elem((1, 3, 32, 32), 0.2f32);
        data.slice_mut(s![0, .., 8..24, 8..24]).assign(&img);
        let mut m = Array3::zeros((1, 32, 32));
        m.slice_mut(s![.., 8..24, 8..24]).fill(1);
        let score = reference_appearance(
            &reference,
            &VideoClip::new(data).unwrap(),
            &MaskSequence::new(m).unwrap(),
        )
        .unwrap();
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let r = ReferenceImage::new(textured(), None).unwrap();
        assert!(reference_appearance(&r, &clip(0.5), &MaskSequence::zeros(3, 32, 32)).is_err());
    }
}
