//! Minimal shape rasterizer shared by pose rendering, scene synthesis and
//! shape augmentation. A pixel `(x, y)` belongs to a shape iff its center
//! `(x + 0.5, y + 0.5)` lies inside the shape, so a shape's silhouette mask and
//! its painted pixels always agree exactly.

use ndarray::{Array2, ArrayViewMut2};

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Disc {
        cx: f64,
        cy: f64,
        r: f64,
    },
    /// Segment `a`–`b` thickened by radius `r`.
    Capsule {
        ax: f64,
        ay: f64,
        bx: f64,
        by: f64,
        r: f64,
    },
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    Polygon(Vec<(f64, f64)>),
}

impl Shape {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        match self {
            Shape::Disc { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
            Shape::Capsule { ax, ay, bx, by, r } => {
                let (dx, dy) = (bx - ax, by - ay);
                let len2 = dx * dx + dy * dy;
                let u = if len2 > 0.0 {
                    (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (qx, qy) = (ax + u * dx, ay + u * dy);
                (px - qx).powi(2) + (py - qy).powi(2) <= r * r
            }
            Shape::Rect { x0, y0, x1, y1 } => px >= *x0 && px < *x1 && py >= *y0 && py < *y1,
            Shape::Polygon(pts) => {
                let mut inside = false;
                let n = pts.len();
                let mut j = n.wrapping_sub(1);
                for i in 0..n {
                    let (xi, yi) = pts[i];
                    let (xj, yj) = pts[j];
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }

    /// Axis-aligned bounds `(x0, y0, x1, y1)` in continuous coordinates.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match self {
            Shape::Disc { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Shape::Capsule { ax, ay, bx, by, r } => {
                (ax.min(*bx) - r, ay.min(*by) - r, ax.max(*bx) + r, ay.max(*by) + r)
            }
            Shape::Rect { x0, y0, x1, y1 } => (*x0, *y0, *x1, *y1),
            Shape::Polygon(pts) => pts.iter().fold(
                (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
                |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
            ),
        }
    }

    /// Calls `f(y, x)` for every covered pixel inside a `height × width` grid.
    pub fn for_each_pixel(&self, height: usize, width: usize, mut f: impl FnMut(usize, usize)) {
        let (bx0, by0, bx1, by1) = self.bounds();
        if !(bx0.is_finite() && by0.is_finite() && bx1.is_finite() && by1.is_finite()) {
            return;
        }
        let xs = (bx0 - 1.0).floor().max(0.0) as usize;
        let ys = (by0 - 1.0).floor().max(0.0) as usize;
        let xe = ((bx1 + 1.0).ceil().max(0.0) as usize).min(width);
        let ye = ((by1 + 1.0).ceil().max(0.0) as usize).min(height);
        for y in ys..ye {
            for x in xs..xe {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    f(y, x);
                }
            }
        }
    }

    pub fn rasterize(&self, height: usize, width: usize) -> Array2<u8> {
        let mut m = Array2::zeros((height, width));
        self.fill(&mut m.view_mut());
        m
    }

    /// Sets covered pixels of `mask` to 1.
    pub fn fill(&self, mask: &mut ArrayViewMut2<u8>) {
        let (h, w) = mask.dim();
        self.for_each_pixel(h, w, |y, x| mask[[y, x]] = 1);
    }
}
