//! Image resampling: bilinear for color planes, nearest for masks, and the
//! aspect-preserving letterbox used to fit references onto a fixed canvas.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};

fn sample_bilinear(plane: &ArrayView2<f32>, x: f64, y: f64) -> f32 {
    // (x, y) in continuous pixel coordinates; pixel centers at +0.5. Outside is 0.
    let (h, w) = plane.dim();
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let ax = fx - x0;
    let ay = fy - y0;
    let get = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[[yy as usize, xx as usize]] as f64
        }
    };
    let v = get(y0, x0) * (1.0 - ax) * (1.0 - ay)
        + get(y0, x0 + 1.0) * ax * (1.0 - ay)
        + get(y0 + 1.0, x0) * (1.0 - ax) * ay
        + get(y0 + 1.0, x0 + 1.0) * ax * ay;
    v as f32
}

fn sample_bilinear_clamped(plane: &ArrayView2<f32>, x: f64, y: f64) -> f32 {
    let (h, w) = plane.dim();
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = fx.floor() as usize;
    let y0 = fy.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ax = fx - x0 as f64;
    let ay = fy - y0 as f64;
    let v = plane[[y0, x0]] as f64 * (1.0 - ax) * (1.0 - ay)
        + plane[[y0, x1]] as f64 * ax * (1.0 - ay)
        + plane[[y1, x0]] as f64 * (1.0 - ax) * ay
        + plane[[y1, x1]] as f64 * ax * ay;
    v as f32
}

/// Bilinear resize of a `(C, H, W)` image with edge clamping. Same-size input is copied.
pub fn resize_bilinear(img: &ArrayView3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (c, h, w) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.to_owned();
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Array3::zeros((c, out_h, out_w));
    for ch in 0..c {
        let plane = img.slice(s![ch, .., ..]);
        for y in 0..out_h {
            for x in 0..out_w {
                out[[ch, y, x]] = sample_bilinear_clamped(&plane, (x as f64 + 0.5) * sx, (y as f64 + 0.5) * sy);
            }
        }
    }
    out
}

/// Nearest-neighbour resize of a binary plane. Same-size input is copied.
pub fn resize_nearest(mask: &ArrayView2<u8>, out_h: usize, out_w: usize) -> Array2<u8> {
    let (h, w) = mask.dim();
    if (h, w) == (out_h, out_w) {
        return mask.to_owned();
    }
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let sy = (((y as f64 + 0.5) * h as f64 / out_h as f64) as usize).min(h - 1);
        let sx = (((x as f64 + 0.5) * w as f64 / out_w as f64) as usize).min(w - 1);
        mask[[sy, sx]]
    })
}

/// Placement of a letterboxed image inside its canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// Largest aspect-preserving fit of `src_h × src_w` inside `dst_h × dst_w`, centered.
pub fn letterbox_placement(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Placement {
    let scale = (dst_h as f64 / src_h as f64).min(dst_w as f64 / src_w as f64);
    let height = ((src_h as f64 * scale).round() as usize).clamp(1, dst_h);
    let width = ((src_w as f64 * scale).round() as usize).clamp(1, dst_w);
    Placement {
        x0: (dst_w - width) / 2,
        y0: (dst_h - height) / 2,
        width,
        height,
    }
}

/// Aspect-preserving resize onto a zero canvas of `dst_h × dst_w`.
pub fn letterbox(img: &ArrayView3<f32>, dst_h: usize, dst_w: usize) -> (Array3<f32>, Placement) {
    let (c, h, w) = img.dim();
    let p = letterbox_placement(h, w, dst_h, dst_w);
    let resized = resize_bilinear(img, p.height, p.width);
    let mut out = Array3::zeros((c, dst_h, dst_w));
    out.slice_mut(s![.., p.y0..p.y0 + p.height, p.x0..p.x0 + p.width])
        .assign(&resized);
    (out, p)
}

/// 2D affine map from output pixel coordinates back to input coordinates.
#[derive(Debug, Clone, Copy)]
pub struct InverseAffine {
    /// `[a, b, c; d, e, f]`: `x_in = a·x + b·y + c`, `y_in = d·x + e·y + f`.
    pub m: [f64; 6],
}

impl InverseAffine {
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5])
    }
}

/// Warps a `(C, H, W)` image into an `out_h × out_w` canvas (zero outside the source).
pub fn warp_bilinear(img: &ArrayView3<f32>, inv: &InverseAffine, out_h: usize, out_w: usize) -> Array3<f32> {
    let c = img.dim().0;
    let mut out = Array3::zeros((c, out_h, out_w));
    for ch in 0..c {
        let plane = img.slice(s![ch, .., ..]);
        for y in 0..out_h {
            for x in 0..out_w {
                let (sx, sy) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
                out[[ch, y, x]] = sample_bilinear(&plane, sx, sy).clamp(0.0, 1.0);
            }
        }
    }
    out
}

pub fn warp_nearest(mask: &ArrayView2<u8>, inv: &InverseAffine, out_h: usize, out_w: usize) -> Array2<u8> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let (sx, sy) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
        if sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
            0
        } else {
            mask[[sy as usize, sx as usize]]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_resize_is_exact_copy() {
        let img = Array3::from_shape_fn((3, 5, 7), |(c, y, x)| (c + y * x) as f32 / 50.0);
        assert_eq!(resize_bilinear(&img.view(), 5, 7), img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Array3::from_elem((3, 10, 6), 0.25f32);
        let out = resize_bilinear(&img.view(), 17, 23);
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn letterbox_wide_source_gets_vertical_bands() {
        let p = letterbox_placement(32, 64, 64, 64);
        assert_eq!(
            p,
            Placement {
                x0: 0,
                y0: 16,
                width: 64,
                height: 32
            }
        );
    }

    #[test]
    fn identity_warp_reproduces_image() {
        let img = Array3::from_shape_fn((1, 4, 4), |(_, y, x)| (y * 4 + x) as f32 / 16.0);
        let inv = InverseAffine {
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        };
        let out = warp_bilinear(&img.view(), &inv, 4, 4);
        for (a, b) in out.iter().zip(img.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
