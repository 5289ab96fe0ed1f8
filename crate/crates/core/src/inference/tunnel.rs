//! Tight crops around small subjects and feathered compositing back into the source.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::mask_augment::union_bbox;
use crate::video::{BBox, MaskSequence, VideoClip};
use crate::{Error, Result};

pub const TUNNEL_THRESHOLD: f64 = 0.05;
pub const TUNNEL_MARGIN: f64 = 1.5;
/// Box edges snap outward to multiples of this.
pub const TUNNEL_SNAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tunnel {
    /// Region that is regenerated; the whole frame when inactive.
    pub bbox: BBox,
    pub active: bool,
    pub area_ratio: f64,
    pub threshold: f64,
    pub margin: f64,
}

fn snap_down(v: usize) -> usize {
    v / TUNNEL_SNAP * TUNNEL_SNAP
}

fn snap_up(v: usize, limit: usize) -> usize {
    v.div_ceil(TUNNEL_SNAP).saturating_mul(TUNNEL_SNAP).min(limit)
}

/// `b` scaled by `margin` about its center, clamped to the frame and snapped outward.
pub fn tunnel_box(b: &BBox, margin: f64, width: usize, height: usize) -> BBox {
    let (cx, cy) = b.center();
    let hw = b.width() as f64 * margin / 2.0;
    let hh = b.height() as f64 * margin / 2.0;
    let x0 = (cx - hw).floor().max(0.0) as usize;
    let y0 = (cy - hh).floor().max(0.0) as usize;
    let x1 = ((cx + hw).ceil() as usize).min(width);
    let y1 = ((cy + hh).ceil() as usize).min(height);
    BBox {
        x0: snap_down(x0),
        y0: snap_down(y0),
        x1: snap_up(x1, width),
        y1: snap_up(y1, height),
    }
}

/// Activates when the mean per-frame mask area ratio is below `threshold`.
pub fn plan_tunnel(mask: &MaskSequence, threshold: f64, margin: f64) -> Result<Tunnel> {
    let (h, w) = (mask.height(), mask.width());
    let union = union_bbox(mask).ok_or(Error::NoSubject)?;
    let area_ratio = mask.mean_area_ratio();
    let active = area_ratio < threshold;
    Ok(Tunnel {
        bbox: if active {
            tunnel_box(&union, margin, w, h)
        } else {
            BBox::full(w, h)
        },
        active,
        area_ratio,
        threshold,
        margin,
    })
}

impl Tunnel {
    /// Grows an active box to contain `b`, keeping edges on the snap grid.
    pub fn enclose(&mut self, b: &BBox, width: usize, height: usize) {
        if self.active {
            let u = self.bbox.union(b);
            self.bbox = BBox {
                x0: snap_down(u.x0),
                y0: snap_down(u.y0),
                x1: snap_up(u.x1, width),
                y1: snap_up(u.y1, height),
            };
        }
    }
}

/// Normalized box blur of a binary mask with radius `radius`; windows are
/// clipped at the frame border. Radius 0 returns the mask as 0/1.
pub fn feather_alpha(mask: &ArrayView2<u8>, radius: usize) -> Array2<f32> {
    let (h, w) = mask.dim();
    let mut integral = Array2::<u32>::zeros((h + 1, w + 1));
    for y in 0..h {
        for x in 0..w {
            integral[[y + 1, x + 1]] =
                u32::from(mask[[y, x]] != 0) + integral[[y, x + 1]] + integral[[y + 1, x]] - integral[[y, x]];
        }
    }
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius + 1).min(h));
        let (x0, x1) = (x.saturating_sub(radius), (x + radius + 1).min(w));
        let inside = integral[[y1, x1]] + integral[[y0, x0]] - integral[[y0, x1]] - integral[[y1, x0]];
        inside as f32 / ((y1 - y0) * (x1 - x0)) as f32
    })
}

/// Composites one frame. `generated` covers `bbox`; pixels with α = 0 (including
/// everything outside the box) are copied from `source` unchanged.
pub fn blend_frame(
    source: &ArrayView3<f32>,
    generated: &ArrayView3<f32>,
    bbox: &BBox,
    mask: &ArrayView2<u8>,
    feather: usize,
) -> Result<Array3<f32>> {
    let (c, h, w) = source.dim();
    if generated.dim() != (c, bbox.height(), bbox.width()) || !bbox.fits(w, h) || mask.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "generated region {:?} does not match box {:?} in a {h}x{w} frame",
            generated.dim(),
            bbox
        )));
    }
    let alpha = feather_alpha(mask, feather);
    let mut out = source.to_owned();
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            let a = alpha[[y, x]];
            if a == 0.0 {
                continue;
            }
            for ch in 0..c {
                let g = generated[[ch, y - bbox.y0, x - bbox.x0]];
                out[[ch, y, x]] = if a == 1.0 {
                    g
                } else {
                    a * g + (1.0 - a) * source[[ch, y, x]]
                };
            }
        }
    }
    Ok(out)
}

/// Clip-level [`blend_frame`].
pub fn blend_back(
    source: &VideoClip,
    generated: &VideoClip,
    tunnel: &Tunnel,
    aug_mask: &MaskSequence,
    feather: usize,
) -> Result<VideoClip> {
    if generated.frames() != source.frames() || !source.same_dims(aug_mask) {
        return Err(Error::Shape(
            "source, generated clip and mask must have equal frame counts".into(),
        ));
    }
    let mut out = source.data().clone();
    for t in 0..source.frames() {
        let f = blend_frame(
            &source.frame(t),
            &generated.frame(t),
            &tunnel.bbox,
            &aug_mask.frame(t),
            feather,
        )?;
        out.slice_mut(s![t, .., .., ..]).assign(&f);
    }
    VideoClip::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    fn square_mask(frames: usize, size: usize, side: usize, x0: usize, y0: usize) -> MaskSequence {
        let mut m = Array3::zeros((frames, size, size));
        m.slice_mut(s![.., y0..y0 + side, x0..x0 + side]).fill(1);
        MaskSequence::new(m).unwrap()
    }

    #[test]
    fn activation_threshold() {
        // 11x11 of 64x64 is about 0.0295; 40x40 is 0.39.
        assert!(
            plan_tunnel(&square_mask(2, 64, 11, 20, 20), TUNNEL_THRESHOLD, TUNNEL_MARGIN)
                .unwrap()
                .active
        );
        let big = plan_tunnel(&square_mask(2, 64, 40, 10, 10), TUNNEL_THRESHOLD, TUNNEL_MARGIN).unwrap();
        assert!(!big.active);
        assert_eq!(big.bbox, BBox::full(64, 64));
    }

    #[test]
    fn centered_box_geometry() {
        let t = plan_tunnel(&square_mask(1, 64, 10, 27, 27), TUNNEL_THRESHOLD, TUNNEL_MARGIN).unwrap();
        // 27..37 scaled by 1.5 about 32 is 24.5..39.5; snapped outward to 24..40.
        assert_eq!(
            t.bbox,
            BBox {
                x0: 24,
                y0: 24,
                x1: 40,
                y1: 40
            }
        );
        assert!((16..=24).contains(&t.bbox.width()));
    }

    #[test]
    fn alpha_support() {
        let m = square_mask(1, 32, 20, 6, 6);
        let a = feather_alpha(&m.frame(0), 4);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        // Pixels more than 4 px inside the mask are fully opaque.
        for y in 11..21 {
            for x in 11..21 {
                assert_eq!(a[[y, x]], 1.0);
            }
        }
        assert_eq!(a[[0, 0]], 0.0);
        let hard = feather_alpha(&m.frame(0), 0);
        assert_eq!(hard, m.frame(0).mapv(f32::from));
    }

    #[test]
    fn hard_composite_keeps_background() {
        let src = VideoClip::new(Array4::from_elem((2, 3, 16, 16), 0.25)).unwrap();
        let gen = VideoClip::new(Array4::from_elem((2, 3, 16, 16), 0.75)).unwrap();
        let m = square_mask(2, 16, 4, 5, 5);
        let tunnel = Tunnel {
            bbox: BBox::full(16, 16),
            active: false,
            area_ratio: 0.0,
            threshold: TUNNEL_THRESHOLD,
            margin: TUNNEL_MARGIN,
        };
        let out = blend_back(&src, &gen, &tunnel, &m, 0).unwrap();
        for ((t, _, y, x), &v) in out.data().indexed_iter() {
            let expect = if m.frame(t)[[y, x]] == 1 { 0.75 } else { 0.25 };
            assert_eq!(v, expect);
        }
        let empty = MaskSequence::zeros(2, 16, 16);
        assert_eq!(blend_back(&src, &gen, &tunnel, &empty, 0).unwrap(), src);
    }
}
