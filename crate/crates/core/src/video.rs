//! Pixel-space domain types and the two subject operators: the agnostic video
//! `A = V ⊙ (1 − M)` and reference extraction `r' = v_i ⊙ m_i`.

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PIXEL_CHANNELS: usize = 3;

/// Half-open pixel box `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidValue(format!("degenerate box ({x0},{y0})-({x1},{y1})")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            x1: width,
            y1: height,
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    /// Center in continuous pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x1 <= width && self.y1 <= height
    }
}

/// A clip of RGB frames with values in `[0, 1]`, laid out `(T, 3, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    data: Array4<f32>,
}

impl VideoClip {
    pub fn new(data: Array4<f32>) -> Result<Self> {
        let (t, c, h, w) = data.dim();
        if t == 0 {
            return Err(Error::Shape("clip must have at least one frame".into()));
        }
        if c != PIXEL_CHANNELS {
            return Err(Error::Shape(format!("clip must have 3 channels, got {c}")));
        }
        if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Shape(format!(
                "clip height/width must be positive multiples of 8, got {h}x{w}"
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidValue(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { data })
    }

    /// Builds a clip after clamping every value into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(mut data: Array4<f32>) -> Result<Self> {
        data.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self::new(data)
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(Array4::zeros((frames, PIXEL_CHANNELS, height, width)))
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, f32> {
        self.data.index_axis(Axis(0), t)
    }

    /// Frames `[start, end)` as a new clip.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames() {
            return Err(Error::Shape(format!(
                "frame range {start}..{end} invalid for {} frames",
                self.frames()
            )));
        }
        Ok(Self {
            data: self.data.slice(s![start..end, .., .., ..]).to_owned(),
        })
    }

    /// Spatial crop; the box must have multiple-of-8 sides.
    pub fn crop(&self, b: &BBox) -> Result<Self> {
        if !b.fits(self.width(), self.height()) {
            return Err(Error::Shape(format!("crop {b:?} outside clip")));
        }
        Self::new(self.data.slice(s![.., .., b.y0..b.y1, b.x0..b.x1]).to_owned())
    }

    pub fn same_dims(&self, mask: &MaskSequence) -> bool {
        self.frames() == mask.frames() && self.height() == mask.height() && self.width() == mask.width()
    }
}

/// Per-frame binary masks laid out `(T, H, W)` with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSequence {
    data: Array3<u8>,
}

impl MaskSequence {
    pub fn new(data: Array3<u8>) -> Result<Self> {
        if data.dim().0 == 0 {
            return Err(Error::Shape("mask must have at least one frame".into()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidValue("mask values must be 0 or 1".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((frames, height, width)),
        }
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn into_data(self) -> Array3<u8> {
        self.data
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, u8> {
        self.data.index_axis(Axis(0), t)
    }

    pub fn count(&self, t: usize) -> usize {
        self.frame(t).iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty_frame(&self, t: usize) -> bool {
        self.frame(t).iter().all(|&v| v == 0)
    }

    pub fn is_all_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Pixelwise `self ⊇ other`.
    pub fn contains(&self, other: &MaskSequence) -> bool {
        self.data.dim() == other.data.dim() && self.data.iter().zip(other.data.iter()).all(|(&a, &b)| a >= b)
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.frames() {
            return Err(Error::Shape(format!(
                "frame range {start}..{end} invalid for {} frames",
                self.frames()
            )));
        }
        Ok(Self {
            data: self.data.slice(s![start..end, .., ..]).to_owned(),
        })
    }

    pub fn crop(&self, b: &BBox) -> Result<Self> {
        if !b.fits(self.width(), self.height()) {
            return Err(Error::Shape(format!("crop {b:?} outside mask")));
        }
        Ok(Self {
            data: self.data.slice(s![.., b.y0..b.y1, b.x0..b.x1]).to_owned(),
        })
    }

    /// Mean over frames of the masked-pixel fraction.
    pub fn mean_area_ratio(&self) -> f64 {
        let per_frame = (self.height() * self.width()) as f64;
        (0..self.frames())
            .map(|t| self.count(t) as f64 / per_frame)
            .sum::<f64>()
            / self.frames() as f64
    }
}

/// Reference subject image `(3, H, W)` with an optional binary matte.
///
/// The matte is kept next to the (zero-background) image so that black subject
/// pixels stay distinguishable from off-subject pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceImage {
    image: Array3<f32>,
    alpha: Option<Array2<u8>>,
}

impl ReferenceImage {
    pub fn new(image: Array3<f32>, alpha: Option<Array2<u8>>) -> Result<Self> {
        let (c, h, w) = image.dim();
        if c != PIXEL_CHANNELS {
            return Err(Error::Shape(format!("reference must have 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::DegenerateReference(format!("{h}x{w} image")));
        }
        if let Some(a) = &alpha {
            if a.dim() != (h, w) {
                return Err(Error::Shape(format!(
                    "alpha {:?} does not match image {h}x{w}",
                    a.dim()
                )));
            }
            if a.iter().any(|&v| v > 1) {
                return Err(Error::InvalidValue("alpha values must be 0 or 1".into()));
            }
        }
        if let Some(v) = image.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidValue(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { image, alpha })
    }

    pub fn height(&self) -> usize {
        self.image.dim().1
    }

    pub fn width(&self) -> usize {
        self.image.dim().2
    }

    pub fn image(&self) -> &Array3<f32> {
        &self.image
    }

    pub fn alpha(&self) -> Option<&Array2<u8>> {
        self.alpha.as_ref()
    }

    /// Image with off-matte pixels set to zero.
    pub fn premultiplied(&self) -> Array3<f32> {
        let mut out = self.image.clone();
        if let Some(a) = &self.alpha {
            for mut plane in out.outer_iter_mut() {
                plane.zip_mut_with(a, |v, &m| {
                    if m == 0 {
                        *v = 0.0
                    }
                });
            }
        }
        out
    }

    /// Per-pixel weight: the matte if present, otherwise all ones.
    pub fn weights(&self) -> Array2<f32> {
        match &self.alpha {
            Some(a) => a.mapv(f32::from),
            None => Array2::ones((self.height(), self.width())),
        }
    }
}

fn check_pair(clip: &VideoClip, mask: &MaskSequence) -> Result<()> {
    if !clip.same_dims(mask) {
        return Err(Error::Shape(format!(
            "clip (T={}, {}x{}) and mask (T={}, {}x{}) differ",
            clip.frames(),
            clip.height(),
            clip.width(),
            mask.frames(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

/// `A = V ⊙ (1 − M)`: the clip with the masked region zeroed.
pub fn make_agnostic(clip: &VideoClip, mask: &MaskSequence) -> Result<VideoClip> {
    check_pair(clip, mask)?;
    let mut data = clip.data.clone();
    for (mut frame, m) in data.outer_iter_mut().zip(mask.data.outer_iter()) {
        for mut plane in frame.outer_iter_mut() {
            plane.zip_mut_with(&m, |v, &mv| {
                if mv == 1 {
                    *v = 0.0
                }
            });
        }
    }
    Ok(VideoClip { data })
}

/// `r' = v_i ⊙ m_i`, cropped to the mask's bounding box, with the cropped mask as matte.
pub fn extract_reference(clip: &VideoClip, mask: &MaskSequence, frame_index: usize) -> Result<ReferenceImage> {
    check_pair(clip, mask)?;
    if frame_index >= clip.frames() {
        return Err(Error::FrameIndex {
            index: frame_index,
            frames: clip.frames(),
        });
    }
    let m = mask.frame(frame_index);
    let b = crate::mask_augment::bbox_of(m).ok_or(Error::EmptySubjectFrame(frame_index))?;
    let alpha = m.slice(s![b.y0..b.y1, b.x0..b.x1]).to_owned();
    let mut image = clip.frame(frame_index).slice(s![.., b.y0..b.y1, b.x0..b.x1]).to_owned();
    for mut plane in image.outer_iter_mut() {
        plane.zip_mut_with(&alpha, |v, &a| {
            if a == 0 {
                *v = 0.0
            }
        });
    }
    ReferenceImage::new(image, Some(alpha))
}
