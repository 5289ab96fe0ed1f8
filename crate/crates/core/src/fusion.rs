//! Assembly of the fused model input.
//!
//! The reference latent is prepended at temporal index 0 of both the noisy
//! stream and the dummy-reference stream. Condition streams (agnostic video,
//! pose, mask) are zero at that index. All streams are then concatenated along
//! channels as `[noisy | dummy_ref | agnostic | pose | mask(4)]`.
//!
//! Tokens are `patch × patch` cells of the latent grid, ordered frame-major then
//! row-major. Reference tokens attend only to reference tokens; video tokens
//! attend to everything.

use ndarray::{concatenate, s, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::codec::{LatentBlock, MaskLatent, LATENT_CHANNELS, MASK_CHANNELS};
use crate::{Error, Result};

pub const REF_POSITION: usize = 0;
pub const FUSED_CHANNELS: usize = 4 * LATENT_CHANNELS + MASK_CHANNELS;

/// Channel offsets of each group inside the fused tensor.
pub mod groups {
    use super::{LATENT_CHANNELS as C, MASK_CHANNELS};
    use std::ops::Range;

    pub const NOISY: Range<usize> = 0..C;
    pub const DUMMY: Range<usize> = C..2 * C;
    pub const AGNOSTIC: Range<usize> = 2 * C..3 * C;
    pub const POSE: Range<usize> = 3 * C..4 * C;
    pub const MASK: Range<usize> = 4 * C..4 * C + MASK_CHANNELS;
}

/// Where the dummy reference stream takes its first frame from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DummySource {
    /// An externally supplied clean first-frame latent (or zeros when absent).
    #[default]
    Clean,
    /// Frame 0 of the noisy stream itself.
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub patch: usize,
    pub dummy: DummySource,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            patch: 2,
            dummy: DummySource::Clean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    /// Temporal length including the reference frame.
    pub frames: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    pub patch: usize,
}

impl TokenLayout {
    pub fn new(frames: usize, latent_h: usize, latent_w: usize, patch: usize) -> Result<Self> {
        if patch == 0 || latent_h % patch != 0 || latent_w % patch != 0 {
            return Err(Error::Shape(format!(
                "latent grid {latent_h}x{latent_w} is not divisible by patch {patch}"
            )));
        }
        if frames == 0 {
            return Err(Error::Shape("layout needs at least the reference frame".into()));
        }
        Ok(Self {
            frames,
            latent_h,
            latent_w,
            patch,
        })
    }

    pub fn grid_h(&self) -> usize {
        self.latent_h / self.patch
    }

    pub fn grid_w(&self) -> usize {
        self.latent_w / self.patch
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    pub fn total_tokens(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }

    pub fn ref_tokens(&self) -> usize {
        self.tokens_per_frame()
    }

    pub fn video_tokens(&self) -> usize {
        self.total_tokens() - self.ref_tokens()
    }

    pub fn is_ref_token(&self, token: usize) -> bool {
        token / self.tokens_per_frame() == REF_POSITION
    }

    /// `(frame, grid_y, grid_x)` of a token.
    pub fn position(&self, token: usize) -> (usize, usize, usize) {
        let tpf = self.tokens_per_frame();
        let r = token % tpf;
        (token / tpf, r / self.grid_w(), r % self.grid_w())
    }
}

/// Boolean token × token matrix; `allowed[[q, k]]` means query `q` may attend to key `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    allowed: Array2<bool>,
}

impl AttentionMask {
    pub fn from_dense(allowed: Array2<bool>) -> Result<Self> {
        let (q, k) = allowed.dim();
        if q != k {
            return Err(Error::Shape(format!("attention mask must be square, got {q}x{k}")));
        }
        if allowed.rows().into_iter().any(|r| !r.iter().any(|&a| a)) {
            return Err(Error::InvalidValue(
                "every query must be allowed at least one key".into(),
            ));
        }
        Ok(Self { allowed })
    }

    pub fn len(&self) -> usize {
        self.allowed.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[[q, k]]
    }

    pub fn dense(&self) -> &Array2<bool> {
        &self.allowed
    }

    pub fn forbidden_count(&self) -> usize {
        self.allowed.iter().filter(|&&a| !a).count()
    }

    /// Allowed key indices for query `q`, ascending.
    pub fn allowed_keys(&self, q: usize) -> Vec<usize> {
        self.allowed
            .row(q)
            .iter()
            .enumerate()
            .filter_map(|(k, &a)| a.then_some(k))
            .collect()
    }
}

pub fn build_attention_mask(layout: &TokenLayout) -> AttentionMask {
    let n = layout.total_tokens();
    let allowed = Array2::from_shape_fn((n, n), |(q, k)| !layout.is_ref_token(q) || layout.is_ref_token(k));
    AttentionMask { allowed }
}

/// Reference token indices and video token indices. Disjoint, covering all tokens.
pub fn kv_partition(layout: &TokenLayout) -> (Vec<usize>, Vec<usize>) {
    (0..layout.total_tokens()).partition(|&t| layout.is_ref_token(t))
}

/// Frame 0 of `source` followed by zero frames, same dims as `source`.
pub fn make_dummy_reference(source: &LatentBlock) -> LatentBlock {
    let mut out = Array4::zeros(source.dim());
    out.slice_mut(s![0, .., .., ..])
        .assign(&source.data().slice(s![0, .., .., ..]));
    LatentBlock::new(out).expect("copied from a valid latent")
}

pub fn concat_reference(stream: &LatentBlock, reference: &LatentBlock) -> Result<LatentBlock> {
    let (rf, rc, rh, rw) = reference.dim();
    let (_, c, h, w) = stream.dim();
    if rf != 1 {
        return Err(Error::Shape(format!("reference latent must have 1 frame, got {rf}")));
    }
    if (rc, rh, rw) != (c, h, w) {
        return Err(Error::Shape(format!(
            "reference latent {rc}x{rh}x{rw} does not match stream {c}x{h}x{w}"
        )));
    }
    let data = concatenate(Axis(0), &[reference.data().view(), stream.data().view()]).expect("dims checked");
    LatentBlock::new(data)
}

/// Splits a concatenated stream back into `(stream, reference)`.
pub fn split_reference(joined: &LatentBlock) -> (LatentBlock, LatentBlock) {
    let d = joined.data();
    (
        LatentBlock::new(d.slice(s![1.., .., .., ..]).to_owned()).expect("nonempty"),
        LatentBlock::new(d.slice(s![..1, .., .., ..]).to_owned()).expect("nonempty"),
    )
}

#[derive(Debug, Clone)]
pub struct FusedInput {
    /// `(f + 1, 4·768 + 4, h, w)`.
    pub tensor: Array4<f32>,
    pub attention_mask: AttentionMask,
    /// Per temporal index; false only at the reference frame.
    pub loss_mask: Vec<bool>,
    pub ref_position: usize,
    pub layout: TokenLayout,
}

impl FusedInput {
    pub fn frames(&self) -> usize {
        self.tensor.dim().0
    }

    /// Channel group `range` as an owned array.
    pub fn group(&self, range: std::ops::Range<usize>) -> Array4<f32> {
        self.tensor.slice(s![.., range, .., ..]).to_owned()
    }

    /// Replaces the noisy stream (video frames only; the reference frame is kept).
    pub fn set_noisy_video(&mut self, noisy: &Array4<f32>) -> Result<()> {
        let (f, _, h, w) = self.tensor.dim();
        if noisy.dim() != (f - 1, LATENT_CHANNELS, h, w) {
            return Err(Error::Shape(format!(
                "noisy stream {:?} does not fit {:?}",
                noisy.dim(),
                self.tensor.dim()
            )));
        }
        self.tensor.slice_mut(s![1.., groups::NOISY, .., ..]).assign(noisy);
        Ok(())
    }

    /// Overwrites frame 0 of the dummy stream (position 1 of the fused tensor).
    pub fn set_dummy_first_frame(&mut self, frame: &ndarray::ArrayView3<f32>) {
        self.tensor.slice_mut(s![1, groups::DUMMY, .., ..]).assign(frame);
    }
}

fn check_stream(name: &str, got: (usize, usize, usize, usize), want: (usize, usize, usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!(
            "{name} stream has dims {got:?}, expected {want:?}"
        )));
    }
    Ok(())
}

/// Builds the fused input. `first_frame` supplies the clean dummy-reference
/// frame; when `None` under [`DummySource::Clean`] the dummy stream is all zero.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    noisy: &LatentBlock,
    agnostic: &LatentBlock,
    pose: &LatentBlock,
    mask: &MaskLatent,
    reference: &LatentBlock,
    first_frame: Option<&LatentBlock>,
    cfg: &FusionConfig,
) -> Result<FusedInput> {
    let (f, c, h, w) = noisy.dim();
    if c != LATENT_CHANNELS {
        return Err(Error::Shape(format!(
            "noisy stream has {c} channels, expected {LATENT_CHANNELS}"
        )));
    }
    check_stream("agnostic", agnostic.dim(), (f, c, h, w))?;
    check_stream("pose", pose.dim(), (f, c, h, w))?;
    check_stream("mask", mask.dim(), (f, MASK_CHANNELS, h, w))?;
    check_stream("reference", reference.dim(), (1, c, h, w))?;
    let layout = TokenLayout::new(f + 1, h, w, cfg.patch)?;

    let dummy = match (cfg.dummy, first_frame) {
        (DummySource::Noisy, _) => make_dummy_reference(noisy),
        (DummySource::Clean, Some(ff)) => {
            if (ff.dim().1, ff.dim().2, ff.dim().3) != (c, h, w) {
                return Err(Error::Shape(format!("first-frame stream has dims {:?}", ff.dim())));
            }
            let mut d = Array4::zeros((f, c, h, w));
            d.slice_mut(s![0, .., .., ..])
                .assign(&ff.data().slice(s![0, .., .., ..]));
            LatentBlock::new(d)?
        }
        (DummySource::Clean, None) => LatentBlock::zeros(f, c, h, w),
    };

    let mut tensor = Array4::<f32>::zeros((f + 1, FUSED_CHANNELS, h, w));
    tensor
        .slice_mut(s![.., groups::NOISY, .., ..])
        .assign(concat_reference(noisy, reference)?.data());
    tensor
        .slice_mut(s![.., groups::DUMMY, .., ..])
        .assign(concat_reference(&dummy, reference)?.data());
    tensor
        .slice_mut(s![1.., groups::AGNOSTIC, .., ..])
        .assign(agnostic.data());
    tensor.slice_mut(s![1.., groups::POSE, .., ..]).assign(pose.data());
    tensor
        .slice_mut(s![1.., groups::MASK, .., ..])
        .assign(&mask.data().mapv(f32::from));

    let mut loss_mask = vec![true; f + 1];
    loss_mask[REF_POSITION] = false;
    Ok(FusedInput {
        tensor,
        attention_mask: build_attention_mask(&layout),
        loss_mask,
        ref_position: REF_POSITION,
        layout,
    })
}
