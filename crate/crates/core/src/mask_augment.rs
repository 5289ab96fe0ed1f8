//! Adaptive mask augmentation.
//!
//! Three operators turn a precise subject mask into a coarser one that always
//! contains the subject:
//!
//! - bounding-box fill (the coarsest shape);
//! - grid dilation: the whole frame is tiled from the origin with square blocks,
//!   and every block touching the mask is filled. The block edge is drawn from
//!   `[h1, h2]` pixels during training and fixed to `h3` at inference, so the
//!   number of blocks spanning a subject (`K = bbox_h / block`) grows with the
//!   subject's size;
//! - extra shapes (circle, triangle, rectangle) stamped onto the mask boundary.
//!
//! Block size and shape parameters are drawn once per clip. Shapes are anchored
//! to each frame's bounding-box center so they follow the subject.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::raster::Shape;
use crate::video::{BBox, MaskSequence};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    Train,
    Inference,
}

impl std::str::FromStr for AugmentMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(AugmentMode::Train),
            "inference" => Ok(AugmentMode::Inference),
            other => Err(Error::Config(format!("unknown augment mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Probability of the bounding-box path during training.
    pub p_bbox: f64,
    /// Training block-size range, in pixels at `reference_height`.
    pub h1: usize,
    pub h2: usize,
    /// Inference block size, in pixels at `reference_height`.
    pub h3: usize,
    /// Frame height at which `h1`, `h2`, `h3` are specified; they scale linearly with it.
    pub reference_height: usize,
    /// Probability of extra shape augmentation after the grid path (training only).
    pub p_shape: f64,
    pub n_shapes_min: usize,
    pub n_shapes_max: usize,
    /// Shape size as a fraction of `max(bbox_h, bbox_w)`.
    pub shape_scale_min: f64,
    pub shape_scale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_bbox: 0.3,
            h1: 16,
            h2: 96,
            h3: 32,
            reference_height: 256,
            p_shape: 0.3,
            n_shapes_min: 1,
            n_shapes_max: 3,
            shape_scale_min: 0.1,
            shape_scale_max: 0.4,
        }
    }
}

impl AugmentConfig {
    fn scale(&self, v: usize, frame_h: usize) -> usize {
        ((v as f64 * frame_h as f64 / self.reference_height as f64).round() as usize).max(1)
    }

    /// `(h1, h2, h3)` scaled to a frame of height `frame_h`.
    pub fn scaled_blocks(&self, frame_h: usize) -> (usize, usize, usize) {
        (
            self.scale(self.h1, frame_h),
            self.scale(self.h2, frame_h).min(frame_h.max(1)),
            self.scale(self.h3, frame_h),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} is not a probability")))
            }
        };
        prob("p_bbox", self.p_bbox)?;
        prob("p_shape", self.p_shape)?;
        if self.h1 == 0 || self.h1 > self.h2 || self.h3 == 0 || self.reference_height == 0 {
            return Err(Error::Config(format!(
                "block sizes must satisfy 1 <= h1 <= h2 and h3 >= 1 (got {}, {}, {})",
                self.h1, self.h2, self.h3
            )));
        }
        if self.n_shapes_min == 0 || self.n_shapes_min > self.n_shapes_max {
            return Err(Error::Config("shape count range must be nonempty and >= 1".into()));
        }
        if !(0.0 < self.shape_scale_min && self.shape_scale_min <= self.shape_scale_max) {
            return Err(Error::Config("shape scale range must be positive and nonempty".into()));
        }
        Ok(())
    }
}

/// Grid geometry for one clip: square blocks of `block_h × block_w` pixels and
/// the block counts spanning a subject bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub block_h: usize,
    pub block_w: usize,
    pub k_h: usize,
    pub k_w: usize,
}

/// Tightest box around the positive pixels of one frame.
pub fn bbox_of(frame: ArrayView2<u8>) -> Option<BBox> {
    let (h, w) = frame.dim();
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for ((y, x), &v) in frame.indexed_iter() {
        if v != 0 {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
    }
    (x1 > 0).then_some(BBox { x0, y0, x1, y1 })
}

/// Union of the per-frame boxes, `None` if every frame is empty.
pub fn union_bbox(mask: &MaskSequence) -> Option<BBox> {
    (0..mask.frames())
        .filter_map(|t| bbox_of(mask.frame(t)))
        .reduce(|a, b| a.union(&b))
}

/// Draws the block edge and derives the block counts for `bbox`.
pub fn grid_spec<R: Rng + ?Sized>(
    bbox: &BBox,
    mode: AugmentMode,
    cfg: &AugmentConfig,
    frame_h: usize,
    rng: &mut R,
) -> GridSpec {
    let (h1, h2, h3) = cfg.scaled_blocks(frame_h);
    let block = match mode {
        AugmentMode::Train => rng.random_range(h1..=h2.max(h1)),
        AugmentMode::Inference => h3,
    };
    GridSpec {
        block_h: block,
        block_w: block,
        k_h: bbox.height() / block,
        k_w: bbox.width() / block,
    }
}

fn grid_frame(frame: ArrayView2<u8>, block_h: usize, block_w: usize) -> Array2<u8> {
    let (h, w) = frame.dim();
    let (nby, nbx) = (h.div_ceil(block_h), w.div_ceil(block_w));
    let mut hit = Array2::<bool>::from_elem((nby, nbx), false);
    for ((y, x), &v) in frame.indexed_iter() {
        if v != 0 {
            hit[[y / block_h, x / block_w]] = true;
        }
    }
    let mut out = Array2::<u8>::zeros((h, w));
    for ((by, bx), &on) in hit.indexed_iter() {
        if on {
            let ye = ((by + 1) * block_h).min(h);
            let xe = ((bx + 1) * block_w).min(w);
            out.slice_mut(s![by * block_h..ye, bx * block_w..xe]).fill(1);
        }
    }
    out
}

/// Fills every frame-aligned block that intersects the mask.
pub fn grid_augment(mask: &MaskSequence, spec: &GridSpec) -> MaskSequence {
    let mut data = mask.data().clone();
    for t in 0..mask.frames() {
        let g = grid_frame(mask.frame(t), spec.block_h.max(1), spec.block_w.max(1));
        data.slice_mut(s![t, .., ..]).assign(&g);
    }
    MaskSequence::new(data).expect("binary by construction")
}

/// Replaces each nonempty frame by its filled bounding box.
pub fn bbox_augment(mask: &MaskSequence) -> MaskSequence {
    let mut data = mask.data().clone();
    for t in 0..mask.frames() {
        if let Some(b) = bbox_of(mask.frame(t)) {
            data.slice_mut(s![t, b.y0..b.y1, b.x0..b.x1]).fill(1);
        }
    }
    MaskSequence::new(data).expect("binary by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Triangle,
    Rectangle,
}

/// One extra shape, positioned relative to each frame's bounding-box center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub kind: ShapeKind,
    /// Circle radius, triangle circumradius, or rectangle half-length, in pixels.
    pub size: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub rotation: f64,
    /// Rectangle half-width / half-length.
    pub aspect: f64,
}

impl ShapeParams {
    pub fn geometry(&self, cx: f64, cy: f64) -> Shape {
        let (x, y) = (cx + self.offset_x, cy + self.offset_y);
        let rot = |px: f64, py: f64| {
            let (s, c) = self.rotation.sin_cos();
            (x + px * c - py * s, y + px * s + py * c)
        };
        match self.kind {
            ShapeKind::Circle => Shape::Disc {
                cx: x,
                cy: y,
                r: self.size,
            },
            ShapeKind::Triangle => Shape::Polygon(
                (0..3)
                    .map(|i| {
                        let a = i as f64 * std::f64::consts::TAU / 3.0;
                        rot(self.size * a.cos(), self.size * a.sin())
                    })
                    .collect(),
            ),
            ShapeKind::Rectangle => {
                let (a, b) = (self.size, self.size * self.aspect);
                Shape::Polygon(vec![rot(-a, -b), rot(a, -b), rot(a, b), rot(-a, b)])
            }
        }
    }
}

/// Positive pixels with a 4-neighbour that is zero or outside the frame.
pub fn boundary_pixels(frame: ArrayView2<u8>) -> Vec<(usize, usize)> {
    let (h, w) = frame.dim();
    let off = |y: isize, x: isize| {
        y < 0 || x < 0 || y >= h as isize || x >= w as isize || frame[[y as usize, x as usize]] == 0
    };
    frame
        .indexed_iter()
        .filter(|&(_, &v)| v != 0)
        .filter(|&((y, x), _)| {
            let (y, x) = (y as isize, x as isize);
            off(y - 1, x) || off(y + 1, x) || off(y, x - 1) || off(y, x + 1)
        })
        .map(|(p, _)| p)
        .collect()
}

/// Stamps the given shapes on every nonempty frame (union with the input).
pub fn stamp_shapes(mask: &MaskSequence, shapes: &[ShapeParams]) -> MaskSequence {
    let mut data = mask.data().clone();
    for t in 0..mask.frames() {
        let Some(b) = bbox_of(mask.frame(t)) else { continue };
        let (cx, cy) = b.center();
        let mut plane = data.slice_mut(s![t, .., ..]);
        for sp in shapes {
            sp.geometry(cx, cy).fill(&mut plane);
        }
    }
    MaskSequence::new(data).expect("binary by construction")
}

/// Adds 1–3 random shapes centered on boundary pixels of the mask.
///
/// Parameters are drawn once from a random nonempty anchor frame; returns the
/// mask unchanged (and no shapes) if every frame is empty.
pub fn shape_augment<R: Rng + ?Sized>(
    mask: &MaskSequence,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (MaskSequence, Vec<ShapeParams>) {
    let nonempty: Vec<usize> = (0..mask.frames()).filter(|&t| !mask.is_empty_frame(t)).collect();
    if nonempty.is_empty() {
        return (mask.clone(), Vec::new());
    }
    let anchor = nonempty[rng.random_range(0..nonempty.len())];
    let frame = mask.frame(anchor);
    let b = bbox_of(frame).expect("anchor frame is nonempty");
    let (cx, cy) = b.center();
    let edge = boundary_pixels(frame);
    let extent = b.height().max(b.width()) as f64;

    let n = rng.random_range(cfg.n_shapes_min..=cfg.n_shapes_max);
    let shapes: Vec<ShapeParams> = (0..n)
        .map(|_| {
            let kind = match rng.random_range(0..3) {
                0 => ShapeKind::Circle,
                1 => ShapeKind::Triangle,
                _ => ShapeKind::Rectangle,
            };
            let scale = rng.random_range(cfg.shape_scale_min..=cfg.shape_scale_max);
            let (py, px) = edge[rng.random_range(0..edge.len())];
            let rotation = rng.random_range(0.0..std::f64::consts::TAU);
            let aspect = rng.random_range(0.5..=1.0);
            ShapeParams {
                kind,
                size: (scale * extent).max(0.5),
                offset_x: px as f64 + 0.5 - cx,
                offset_y: py as f64 + 0.5 - cy,
                rotation,
                aspect,
            }
        })
        .collect();
    (stamp_shapes(mask, &shapes), shapes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentPath {
    Bbox,
    Grid,
}

/// Parameters sampled for one clip, serialisable as a JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub mode: AugmentMode,
    pub path: AugmentPath,
    pub grid: Option<GridSpec>,
    /// Per-frame vertical/horizontal block counts (`None` for empty frames).
    pub k_per_frame: Vec<Option<(usize, usize)>>,
    pub shapes: Vec<ShapeParams>,
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub mask: MaskSequence,
    pub record: AugmentRecord,
}

/// Full strategy. Train: bounding-box fill with probability `p_bbox`, otherwise
/// grid dilation followed by extra shapes with probability `p_shape`.
/// Inference: grid dilation with `h3` blocks. The output contains the input in
/// every frame.
pub fn augment<R: Rng + ?Sized>(
    mask: &MaskSequence,
    mode: AugmentMode,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Augmented> {
    cfg.validate()?;
    let union = union_bbox(mask).ok_or(Error::NoSubject)?;

    if mode == AugmentMode::Train && rng.random::<f64>() < cfg.p_bbox {
        return Ok(Augmented {
            mask: bbox_augment(mask),
            record: AugmentRecord {
                mode,
                path: AugmentPath::Bbox,
                grid: None,
                k_per_frame: vec![None; mask.frames()],
                shapes: Vec::new(),
            },
        });
    }

    let spec = grid_spec(&union, mode, cfg, mask.height(), rng);
    let k_per_frame = (0..mask.frames())
        .map(|t| bbox_of(mask.frame(t)).map(|b| (b.height() / spec.block_h, b.width() / spec.block_w)))
        .collect();
    let gridded = grid_augment(mask, &spec);
    let (out, shapes) = if mode == AugmentMode::Train && rng.random::<f64>() < cfg.p_shape {
        shape_augment(&gridded, cfg, rng)
    } else {
        (gridded, Vec::new())
    };
    Ok(Augmented {
        mask: out,
        record: AugmentRecord {
            mode,
            path: AugmentPath::Grid,
            grid: Some(spec),
            k_per_frame,
            shapes,
        },
    })
}
