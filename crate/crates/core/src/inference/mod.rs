//! The swap pipeline: mask augmentation, tunnel cropping, segment scheduling,
//! sampling and compositing.

mod sampler;
mod schedule;
mod tunnel;

use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::{decode_clamped, downsample_mask, encode, encode_reference, LatentBlock, LATENT_CHANNELS};
use crate::denoiser::{load_checkpoint, pose_latent, Model};
use crate::fusion::{assemble, FusionConfig};
use crate::mask_augment::{augment, union_bbox, AugmentConfig, AugmentMode, AugmentRecord};
use crate::pose::{PoseFrame, PoseSequence};
use crate::resample::{resize_bilinear, resize_nearest};
use crate::video::{make_agnostic, BBox, MaskSequence, ReferenceImage, VideoClip};
use crate::{Error, Result};

pub use sampler::euler_sample;
pub use schedule::{schedule_segments, Segment};
pub use tunnel::{
    blend_back, blend_frame, feather_alpha, plan_tunnel, tunnel_box, Tunnel, TUNNEL_MARGIN, TUNNEL_SNAP,
    TUNNEL_THRESHOLD,
};

pub const DEFAULT_SAMPLER_STEPS: usize = 20;

#[derive(Debug, Clone)]
pub struct SwapRequest {
    pub clip: VideoClip,
    /// Per-frame subject mask over the whole clip.
    pub mask: MaskSequence,
    pub reference: ReferenceImage,
    pub pose: Option<PoseSequence>,
    /// Edited first frame `(3, H, W)`; it replaces frame 0 inside the mask.
    pub first_frame_override: Option<Array3<f32>>,
    pub steps: usize,
    pub seed: u64,
}

impl SwapRequest {
    pub fn new(clip: VideoClip, mask: MaskSequence, reference: ReferenceImage) -> Self {
        Self {
            clip,
            mask,
            reference,
            pose: None,
            first_frame_override: None,
            steps: DEFAULT_SAMPLER_STEPS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.clip.height(), self.clip.width());
        if !self.clip.same_dims(&self.mask) {
            return Err(Error::Shape(format!(
                "mask ({} frames, {}x{}) does not match clip ({} frames, {h}x{w})",
                self.mask.frames(),
                self.mask.height(),
                self.mask.width(),
                self.clip.frames()
            )));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Shape(format!("clip size {h}x{w} must be a multiple of 8")));
        }
        if self.mask.is_all_empty() {
            return Err(Error::NoSubject);
        }
        if let Some(p) = &self.pose {
            if (p.len(), p.height, p.width) != (self.clip.frames(), h, w) {
                return Err(Error::Shape("pose sequence does not match the clip".into()));
            }
        }
        if let Some(o) = &self.first_frame_override {
            if o.dim() != (3, h, w) {
                return Err(Error::Shape(format!(
                    "first-frame override {:?} must be (3, {h}, {w})",
                    o.dim()
                )));
            }
        }
        if self.steps == 0 {
            return Err(Error::Config("sampler steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwapConfig {
    pub segment_length: usize,
    /// Box-blur radius of the compositing alpha; 0 composites hard.
    pub feather: usize,
    pub tunnel_threshold: f64,
    pub tunnel_margin: f64,
    pub augment: AugmentConfig,
    pub fusion: FusionConfig,
}

impl Default for SwapConfig {
    fn default() -> Self {
        Self {
            segment_length: 17,
            feather: 4,
            tunnel_threshold: TUNNEL_THRESHOLD,
            tunnel_margin: TUNNEL_MARGIN,
            augment: AugmentConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentTiming {
    pub segment: Segment,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwapReport {
    pub tunnel: Tunnel,
    pub segments: Vec<SegmentTiming>,
    pub augment: AugmentRecord,
    pub steps: usize,
    pub seed: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SwapOutput {
    pub clip: VideoClip,
    /// The augmented mask used for conditioning and compositing.
    pub aug_mask: MaskSequence,
    pub report: SwapReport,
}

/// Anything that can answer a swap request.
pub trait Swapper {
    fn swap(&self, req: &SwapRequest, cfg: &SwapConfig) -> Result<SwapOutput>;
}

/// Trained weights ready for inference.
#[derive(Debug, Clone)]
pub struct SwapModel {
    pub model: Model<f32>,
    pub trained_steps: usize,
}

impl SwapModel {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let (model, meta) = load_checkpoint(dir)?;
        Ok(Self {
            model,
            trained_steps: meta.trained_steps,
        })
    }
}

impl Swapper for SwapModel {
    fn swap(&self, req: &SwapRequest, cfg: &SwapConfig) -> Result<SwapOutput> {
        run_swap(req, cfg, self)
    }
}

/// Maps full frames into the generation canvas: crop to the tunnel box and
/// resize to the source frame size.
struct Canvas {
    bbox: BBox,
    height: usize,
    width: usize,
}

impl Canvas {
    fn frames(&self, frames: &Array4<f32>) -> Result<VideoClip> {
        let b = self.bbox;
        let mut out = Array4::zeros((frames.dim().0, 3, self.height, self.width));
        for (t, f) in frames.axis_iter(Axis(0)).enumerate() {
            let crop = f.slice(s![.., b.y0..b.y1, b.x0..b.x1]);
            out.slice_mut(s![t, .., .., ..])
                .assign(&resize_bilinear(&crop, self.height, self.width));
        }
        VideoClip::from_clamped(out)
    }

    fn mask(&self, mask: &MaskSequence) -> Result<MaskSequence> {
        let b = self.bbox;
        let mut out = ndarray::Array3::zeros((mask.frames(), self.height, self.width));
        for t in 0..mask.frames() {
            let crop = mask.frame(t).slice(s![b.y0..b.y1, b.x0..b.x1]).to_owned();
            out.slice_mut(s![t, .., ..])
                .assign(&resize_nearest(&crop.view(), self.height, self.width));
        }
        MaskSequence::new(out)
    }

    fn pose(&self, pose: &PoseSequence) -> Result<PoseSequence> {
        let b = self.bbox;
        let sx = self.width as f32 / b.width() as f32;
        let sy = self.height as f32 / b.height() as f32;
        let (w, h) = (self.width as f32, self.height as f32);
        let frames = pose
            .frames
            .iter()
            .map(|f| PoseFrame {
                keypoints: f
                    .keypoints
                    .iter()
                    .map(|k| {
                        let x = (k.x - b.x0 as f32) * sx;
                        let y = (k.y - b.y0 as f32) * sy;
                        let mut k = k.clone();
                        k.visible &= x >= 0.0 && y >= 0.0 && x < w && y < h;
                        k.x = x;
                        k.y = y;
                        k
                    })
                    .collect(),
            })
            .collect();
        PoseSequence::new(self.width, self.height, frames)
    }

    /// Generated canvas frame back to box size.
    fn back(&self, frame: &ndarray::ArrayView3<f32>) -> Array3<f32> {
        resize_bilinear(frame, self.bbox.height(), self.bbox.width())
    }
}

/// Frame indices of a segment with trailing padding.
fn segment_indices(seg: &Segment) -> Vec<usize> {
    (seg.start..=seg.end)
        .chain(std::iter::repeat_n(seg.end, seg.pad))
        .collect()
}

/// Runs the full pipeline. Segment `k > 0` takes its first frame, and its
/// clean dummy frame, from segment `k - 1`'s output; that frame is not regenerated.
pub fn run_swap(req: &SwapRequest, cfg: &SwapConfig, weights: &SwapModel) -> Result<SwapOutput> {
    if weights.trained_steps == 0 {
        return Err(Error::Untrained);
    }
    req.validate()?;
    let started = Instant::now();
    let model = &weights.model;
    let (h, w) = (req.clip.height(), req.clip.width());
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);

    let augmented = augment(&req.mask, AugmentMode::Inference, &cfg.augment, &mut rng)?;
    let aug = augmented.mask;
    let mut tunnel = plan_tunnel(&req.mask, cfg.tunnel_threshold, cfg.tunnel_margin)?;
    if let Some(u) = union_bbox(&aug) {
        tunnel.enclose(&u, w, h);
    }
    let canvas = Canvas {
        bbox: tunnel.bbox,
        height: h,
        width: w,
    };
    let segments = schedule_segments(req.clip.frames(), cfg.segment_length)?;
    let ref_latent = encode_reference(&req.reference, h, w)?.to_model_space();
    let source = req.clip.data();
    let mut out = source.clone();
    let mut timings = Vec::with_capacity(segments.len());

    for (k, seg) in segments.iter().enumerate() {
        let seg_start = Instant::now();
        let idx = segment_indices(seg);
        let seg_mask = canvas.mask(&MaskSequence::new(aug.data().select(Axis(0), &idx))?)?;
        let seg_clip = canvas.frames(&source.select(Axis(0), &idx))?;
        let agnostic = encode(&make_agnostic(&seg_clip, &seg_mask)?)?.to_model_space();
        let pose = match &req.pose {
            Some(p) => {
                let frames = idx.iter().map(|&i| p.frames[i].clone()).collect();
                Some(canvas.pose(&PoseSequence::new(p.width, p.height, frames)?)?)
            }
            None => None,
        };
        let pose = pose_latent(pose.as_ref(), &seg_clip)?;
        let mask_latent = downsample_mask(&seg_mask)?;

        let first_pixels = match (k, &req.first_frame_override) {
            (0, Some(o)) => o.clone(),
            _ => out.slice(s![seg.start, .., .., ..]).to_owned(),
        };
        let first = encode(&canvas.frames(&first_pixels.insert_axis(Axis(0)))?)?.to_model_space();

        let (f, _, lh, lw) = agnostic.dim();
        let noise = Array4::from_shape_simple_fn((f, LATENT_CHANNELS, lh, lw), || {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        });
        let mut fused = assemble(
            &LatentBlock::new(noise.clone())?,
            &agnostic,
            &pose,
            &mask_latent,
            &ref_latent,
            Some(&first),
            &cfg.fusion,
        )?;
        let x0 = euler_sample(model, &mut fused, noise, Some(&first), cfg.fusion.dummy, req.steps)?;
        let generated = decode_clamped(&LatentBlock::new(x0)?.from_model_space())?;

        for j in 0..seg.frames() {
            if k > 0 && j == 0 {
                continue;
            }
            let g = seg.start + j;
            let content = match (k, j, &req.first_frame_override) {
                (0, 0, Some(o)) => o
                    .slice(s![.., tunnel.bbox.y0..tunnel.bbox.y1, tunnel.bbox.x0..tunnel.bbox.x1])
                    .to_owned(),
                _ => canvas.back(&generated.frame(j)),
            };
            let blended = blend_frame(
                &req.clip.frame(g),
                &content.view(),
                &tunnel.bbox,
                &aug.frame(g),
                cfg.feather,
            )?;
            out.slice_mut(s![g, .., .., ..]).assign(&blended);
        }
        timings.push(SegmentTiming {
            segment: *seg,
            seconds: seg_start.elapsed().as_secs_f64(),
        });
    }

    Ok(SwapOutput {
        clip: VideoClip::new(out)?,
        aug_mask: aug,
        report: SwapReport {
            tunnel,
            segments: timings,
            augment: augmented.record,
            steps: req.steps,
            seed: req.seed,
            seconds: started.elapsed().as_secs_f64(),
        },
    })
}
