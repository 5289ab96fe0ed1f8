//! Reference augmentation: random scale, rotation, horizontal flip and
//! brightness shift applied consistently to the image and its matte.

use ndarray::{s, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::mask_augment::bbox_of;
use crate::resample::{warp_bilinear, warp_nearest, InverseAffine};
use crate::video::ReferenceImage;
use crate::Result;

const MAX_DRAWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefAugmentParams {
    pub scale: f64,
    pub rotation_deg: f64,
    pub flip: bool,
    pub brightness: f64,
}

impl RefAugmentParams {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation_deg: 0.0,
            flip: false,
            brightness: 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Self {
        let [lo, hi] = cfg.ref_scale;
        Self {
            scale: if lo < hi { rng.random_range(lo..=hi) } else { lo },
            rotation_deg: sym(cfg.ref_rotation_deg, rng),
            flip: rng.random::<f64>() < cfg.ref_flip_prob,
            brightness: sym(cfg.ref_brightness, rng),
        }
    }

    fn warps(&self) -> bool {
        self.scale != 1.0 || self.rotation_deg != 0.0
    }
}

fn sym<R: Rng + ?Sized>(r: f64, rng: &mut R) -> f64 {
    if r > 0.0 {
        rng.random_range(-r..=r)
    } else {
        0.0
    }
}

/// Applies `p` about the image center on a canvas of the same size, then crops
/// to the matte's bounding box. Returns `None` when no subject pixel survives.
pub fn apply_ref_augment(r: &ReferenceImage, p: &RefAugmentParams) -> Option<ReferenceImage> {
    let (h, w) = (r.height(), r.width());
    let mut img: Array3<f32> = r.image().clone();
    let mut alpha: Option<Array2<u8>> = r.alpha().cloned();
    if p.flip {
        img = img.slice(s![.., .., ..;-1]).to_owned();
        alpha = alpha.map(|a| a.slice(s![.., ..;-1]).to_owned());
    }
    if p.warps() {
        let a = alpha.unwrap_or_else(|| Array2::ones((h, w)));
        let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (m0, m1, m3, m4) = (cos / p.scale, sin / p.scale, -sin / p.scale, cos / p.scale);
        let inv = InverseAffine {
            m: [m0, m1, cx - m0 * cx - m1 * cy, m3, m4, cy - m3 * cx - m4 * cy],
        };
        img = warp_bilinear(&img.view(), &inv, h, w);
        alpha = Some(warp_nearest(&a.view(), &inv, h, w));
    }
    if p.brightness != 0.0 {
        let b = p.brightness as f32;
        img.mapv_inplace(|v| (v + b).clamp(0.0, 1.0));
    }
    match alpha {
        None => ReferenceImage::new(img, None).ok(),
        Some(a) => {
            let b = bbox_of(a.view())?;
            let a = a.slice(s![b.y0..b.y1, b.x0..b.x1]).to_owned();
            let mut img = img.slice(s![.., b.y0..b.y1, b.x0..b.x1]).to_owned();
            for mut plane in img.outer_iter_mut() {
                plane.zip_mut_with(&a, |v, &m| {
                    if m == 0 {
                        *v = 0.0
                    }
                });
            }
            ReferenceImage::new(img, Some(a)).ok()
        }
    }
}

/// Draws parameters until the subject survives (at most 8 draws; the reference
/// is returned unchanged if every draw fails).
pub fn augment_reference<R: Rng + ?Sized>(
    r: &ReferenceImage,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ReferenceImage> {
    cfg.validate()?;
    for _ in 0..MAX_DRAWS {
        let p = RefAugmentParams::sample(cfg, rng);
        if let Some(out) = apply_ref_augment(r, &p) {
            return Ok(out);
        }
    }
    Ok(r.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn subject() -> ReferenceImage {
        let img = Array3::from_shape_fn((3, 12, 9), |(c, y, x)| ((c * 5 + y * 3 + x) % 11) as f32 / 10.0);
        let mut a = Array2::ones((12, 9));
        a[[0, 0]] = 0;
        a[[11, 8]] = 0;
        let mut img = img;
        img[[0, 0, 0]] = 0.0;
        img[[1, 0, 0]] = 0.0;
        img[[2, 0, 0]] = 0.0;
        img.slice_mut(s![.., 11, 8]).fill(0.0);
        ReferenceImage::new(img, Some(a)).unwrap()
    }

    #[test]
    fn identity_is_unchanged() {
        let r = subject();
        assert_eq!(apply_ref_augment(&r, &RefAugmentParams::identity()).unwrap(), r);
    }

    #[test]
    fn double_flip_is_identity() {
        let r = subject();
        let p = RefAugmentParams {
            flip: true,
            ..RefAugmentParams::identity()
        };
        let once = apply_ref_augment(&r, &p).unwrap();
        assert_ne!(once, r);
        assert_eq!(apply_ref_augment(&once, &p).unwrap(), r);
    }

    #[test]
    fn brightness_shift_on_constant_image() {
        let r = ReferenceImage::new(Array3::from_elem((3, 4, 4), 0.5), None).unwrap();
        let p = RefAugmentParams {
            brightness: 0.2,
            ..RefAugmentParams::identity()
        };
        let out = apply_ref_augment(&r, &p).unwrap();
        assert!(out.image().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        let p = RefAugmentParams {
            brightness: 0.6,
            ..RefAugmentParams::identity()
        };
        assert!(apply_ref_augment(&r, &p).unwrap().image().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn tiny_scale_vanishes_and_sampling_recovers() {
        let mut a = Array2::zeros((2, 2));
        a[[0, 0]] = 1;
        let r = ReferenceImage::new(Array3::from_elem((3, 2, 2), 0.5), Some(a)).unwrap();
        let p = RefAugmentParams {
            scale: 0.3,
            rotation_deg: 10.0,
            ..RefAugmentParams::identity()
        };
        assert!(apply_ref_augment(&r, &p).is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment_reference(&r, &TrainConfig::default(), &mut rng).unwrap();
        assert!(out.alpha().is_some_and(|a| a.iter().any(|&v| v == 1)));
    }

    #[test]
    fn warp_keeps_matte_and_image_consistent() {
        let r = subject();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let out = augment_reference(&r, &TrainConfig::default(), &mut rng).unwrap();
            let a = out.alpha().unwrap();
            for c in 0..3 {
                for ((y, x), &m) in a.indexed_iter() {
                    if m == 0 {
                        assert_eq!(out.image()[[c, y, x]], 0.0);
                    }
                }
            }
        }
    }
}
