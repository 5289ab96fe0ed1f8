//! Lossless latent codec with the compression contract of a causal 3D video VAE:
//! the first frame is coded alone, then every four frames share one latent
//! frame (`f = (T - 1) / 4 + 1`), and space is reduced 8× per axis.
//!
//! Instead of learning a projection, the codec rearranges pixels into channels
//! (`3 colors × 4 temporal slots × 8 × 8 spatial = 768` channels), so
//! `decode(encode(v)) == v` bit for bit. Latent channel index:
//! `((color * 4 + slot) * 64) + dy * 8 + dx`. Latent frame 0 holds pixel frame 0
//! replicated into all four temporal slots; latent frame `k ≥ 1` holds pixel
//! frames `4k − 3 ..= 4k`.

use ndarray::{s, Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::resample::letterbox;
use crate::video::{MaskSequence, ReferenceImage, VideoClip, PIXEL_CHANNELS};
use crate::{Error, Result};

pub const TEMPORAL_FACTOR: usize = 4;
pub const SPATIAL_FACTOR: usize = 8;
pub const LATENT_CHANNELS: usize = PIXEL_CHANNELS * TEMPORAL_FACTOR * SPATIAL_FACTOR * SPATIAL_FACTOR;
pub const MASK_CHANNELS: usize = TEMPORAL_FACTOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSpec {
    pub temporal_factor: usize,
    pub spatial_factor: usize,
    pub latent_channels: usize,
}

impl Default for CodecSpec {
    fn default() -> Self {
        Self {
            temporal_factor: TEMPORAL_FACTOR,
            spatial_factor: SPATIAL_FACTOR,
            latent_channels: LATENT_CHANNELS,
        }
    }
}

impl CodecSpec {
    pub fn validate(&self) -> Result<()> {
        if *self != Self::default() {
            return Err(Error::Config(format!(
                "codec factors are fixed at temporal 4, spatial 8, 768 channels; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Number of latent frames for a pixel clip of `t` frames.
pub fn latent_frames(t: usize) -> usize {
    (t - 1) / TEMPORAL_FACTOR + 1
}

/// Latent tensor `(f, c, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock {
    data: Array4<f32>,
}

impl LatentBlock {
    pub fn new(data: Array4<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite latent value".into()));
        }
        if data.dim().0 == 0 {
            return Err(Error::Shape("latent must have at least one frame".into()));
        }
        Ok(Self { data })
    }

    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array4::zeros((frames, channels, height, width)),
        }
    }

    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array4<f32> {
        &mut self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    /// Affine map `2x − 1` from `[0, 1]` codec space to the `[-1, 1]` model space.
    pub fn to_model_space(&self) -> Self {
        Self {
            data: self.data.mapv(|v| 2.0 * v - 1.0),
        }
    }

    pub fn from_model_space(&self) -> Self {
        Self {
            data: self.data.mapv(|v| (v + 1.0) * 0.5),
        }
    }
}

/// Mask latent `(f, 4, h, w)` with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskLatent {
    data: Array4<u8>,
}

impl MaskLatent {
    pub fn new(data: Array4<u8>) -> Result<Self> {
        if data.dim().1 != MASK_CHANNELS {
            return Err(Error::Shape(format!(
                "mask latent needs 4 channels, got {}",
                data.dim().1
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidValue("mask latent values must be 0 or 1".into()));
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn data(&self) -> &Array4<u8> {
        &self.data
    }

    /// Whether latent element `(frame, channel, y, x)` of a 768-channel latent lies
    /// in the masked region: the temporal slot of `channel` selects the mask channel.
    pub fn covers(&self, frame: usize, latent_channel: usize, y: usize, x: usize) -> bool {
        let slot = (latent_channel / (SPATIAL_FACTOR * SPATIAL_FACTOR)) % TEMPORAL_FACTOR;
        self.data[[frame, slot, y, x]] == 1
    }
}

fn check_length(t: usize) -> Result<()> {
    if t % TEMPORAL_FACTOR != 1 {
        return Err(Error::InvalidClipLength(t));
    }
    Ok(())
}

/// Pixel frame stored in latent frame `k`, temporal slot `slot`.
fn source_frame(k: usize, slot: usize) -> usize {
    if k == 0 {
        0
    } else {
        TEMPORAL_FACTOR * k - (TEMPORAL_FACTOR - 1) + slot
    }
}

fn channel_index(color: usize, slot: usize, dy: usize, dx: usize) -> usize {
    ((color * TEMPORAL_FACTOR + slot) * SPATIAL_FACTOR + dy) * SPATIAL_FACTOR + dx
}

pub fn encode(clip: &VideoClip) -> Result<LatentBlock> {
    let (t, _, h, w) = clip.data().dim();
    check_length(t)?;
    if h % SPATIAL_FACTOR != 0 || w % SPATIAL_FACTOR != 0 {
        return Err(Error::Shape(format!("{h}x{w} is not a multiple of 8")));
    }
    let f = latent_frames(t);
    let (lh, lw) = (h / SPATIAL_FACTOR, w / SPATIAL_FACTOR);
    let px = clip.data();
    let mut out = Array4::<f32>::zeros((f, LATENT_CHANNELS, lh, lw));
    for k in 0..f {
        for slot in 0..TEMPORAL_FACTOR {
            let src = source_frame(k, slot);
            for color in 0..PIXEL_CHANNELS {
                for dy in 0..SPATIAL_FACTOR {
                    for dx in 0..SPATIAL_FACTOR {
                        let c = channel_index(color, slot, dy, dx);
                        let plane = px.slice(s![src, color, dy..;SPATIAL_FACTOR, dx..;SPATIAL_FACTOR]);
                        out.slice_mut(s![k, c, .., ..]).assign(&plane);
                    }
                }
            }
        }
    }
    LatentBlock::new(out)
}

/// Exact inverse of [`encode`]; latent frame 0 is read from temporal slot 0.
/// Values are taken as-is (no clamping), so only codec-space latents in `[0, 1]`
/// produce a valid clip.
pub fn decode(latent: &LatentBlock) -> Result<VideoClip> {
    let data = decode_raw(latent)?;
    VideoClip::new(data)
}

/// Like [`decode`] but clamps into `[0, 1]`; used for model outputs.
pub fn decode_clamped(latent: &LatentBlock) -> Result<VideoClip> {
    VideoClip::from_clamped(decode_raw(latent)?)
}

fn decode_raw(latent: &LatentBlock) -> Result<Array4<f32>> {
    let (f, c, lh, lw) = latent.dim();
    if c != LATENT_CHANNELS {
        return Err(Error::Shape(format!(
            "latent has {c} channels, expected {LATENT_CHANNELS}"
        )));
    }
    let t = (f - 1) * TEMPORAL_FACTOR + 1;
    let (h, w) = (lh * SPATIAL_FACTOR, lw * SPATIAL_FACTOR);
    let mut px = Array4::<f32>::zeros((t, PIXEL_CHANNELS, h, w));
    for k in 0..f {
        let slots = if k == 0 { 1 } else { TEMPORAL_FACTOR };
        for slot in 0..slots {
            let dst = source_frame(k, slot);
            for color in 0..PIXEL_CHANNELS {
                for dy in 0..SPATIAL_FACTOR {
                    for dx in 0..SPATIAL_FACTOR {
                        let ch = channel_index(color, slot, dy, dx);
                        px.slice_mut(s![dst, color, dy..;SPATIAL_FACTOR, dx..;SPATIAL_FACTOR])
                            .assign(&latent.data.slice(s![k, ch, .., ..]));
                    }
                }
            }
        }
    }
    Ok(px)
}

/// Letterboxes the (matte-multiplied) reference onto a zero canvas of
/// `target_h × target_w` and encodes it as a single latent frame.
pub fn encode_reference(reference: &ReferenceImage, target_h: usize, target_w: usize) -> Result<LatentBlock> {
    if target_h == 0 || target_w == 0 || target_h % SPATIAL_FACTOR != 0 || target_w % SPATIAL_FACTOR != 0 {
        return Err(Error::Shape(format!(
            "target {target_h}x{target_w} is not a positive multiple of 8"
        )));
    }
    let canvas = letterbox_reference(reference, target_h, target_w);
    let clip = VideoClip::from_clamped(canvas.insert_axis(Axis(0)))?;
    encode(&clip)
}

/// Reference image letterboxed onto a `(3, target_h, target_w)` zero canvas.
pub fn letterbox_reference(reference: &ReferenceImage, target_h: usize, target_w: usize) -> Array3<f32> {
    let img = reference.premultiplied();
    letterbox(&img.view(), target_h, target_w).0
}

/// Packs every four mask frames into channels (frame 0 replicated) and
/// max-pools 8×8 spatially.
pub fn downsample_mask(mask: &MaskSequence) -> Result<MaskLatent> {
    let (t, h, w) = mask.data().dim();
    check_length(t)?;
    if h % SPATIAL_FACTOR != 0 || w % SPATIAL_FACTOR != 0 {
        return Err(Error::Shape(format!("{h}x{w} is not a multiple of 8")));
    }
    let f = latent_frames(t);
    let (lh, lw) = (h / SPATIAL_FACTOR, w / SPATIAL_FACTOR);
    let mut out = Array4::<u8>::zeros((f, MASK_CHANNELS, lh, lw));
    for k in 0..f {
        for slot in 0..TEMPORAL_FACTOR {
            let src = mask.frame(source_frame(k, slot));
            for ((y, x), &v) in src.indexed_iter() {
                if v != 0 {
                    out[[k, slot, y / SPATIAL_FACTOR, x / SPATIAL_FACTOR]] = 1;
                }
            }
        }
    }
    MaskLatent::new(out)
}

/// Nearest upsampling of a mask latent back to pixel frames; frame 0 is read
/// from slot 0.
pub fn upsample_mask(latent: &MaskLatent) -> MaskSequence {
    let (f, _, lh, lw) = latent.dim();
    let t = (f - 1) * TEMPORAL_FACTOR + 1;
    let mut out = ndarray::Array3::<u8>::zeros((t, lh * SPATIAL_FACTOR, lw * SPATIAL_FACTOR));
    for k in 0..f {
        let slots = if k == 0 { 1 } else { TEMPORAL_FACTOR };
        for slot in 0..slots {
            let dst = source_frame(k, slot);
            let cells: Array2<u8> = latent.data.slice(s![k, slot, .., ..]).to_owned();
            for ((y, x), _) in out.slice(s![dst, .., ..]).to_owned().indexed_iter() {
                out[[dst, y, x]] = cells[[y / SPATIAL_FACTOR, x / SPATIAL_FACTOR]];
            }
        }
    }
    MaskSequence::new(out).expect("binary by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(t: usize, h: usize, w: usize, seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VideoClip::new(Array4::from_shape_fn((t, 3, h, w), |_| rng.random::<f32>())).unwrap()
    }

    #[test]
    fn encode_shapes() {
        assert_eq!(encode(&random_clip(17, 64, 64, 0)).unwrap().dim(), (5, 768, 8, 8));
        assert_eq!(encode(&random_clip(1, 32, 48, 0)).unwrap().dim(), (1, 768, 4, 6));
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for (t, seed) in [(1, 1), (5, 2), (17, 3)] {
            let clip = random_clip(t, 32, 64, seed);
            assert_eq!(decode(&encode(&clip).unwrap()).unwrap(), clip);
        }
    }

    #[test]
    fn frame_zero_is_replicated_into_all_slots() {
        let clip = random_clip(5, 16, 16, 4);
        let lat = encode(&clip).unwrap();
        for slot in 1..4 {
            let c0 = channel_index(1, 0, 3, 5);
            let cs = channel_index(1, slot, 3, 5);
            assert_eq!(lat.data().slice(s![0, c0, .., ..]), lat.data().slice(s![0, cs, .., ..]));
        }
        // latent frame 1, slot 2 holds pixel frame 3
        assert_eq!(
            lat.data()[[1, channel_index(2, 2, 1, 6), 1, 0]],
            clip.data()[[3, 2, 9, 6]]
        );
    }

    #[test]
    fn encode_rejects_bad_lengths_and_dims() {
        assert!(matches!(
            encode(&random_clip(4, 16, 16, 0)),
            Err(Error::InvalidClipLength(4))
        ));
        let bad = LatentBlock::zeros(2, 767, 2, 2);
        assert!(matches!(decode(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn reference_letterbox_shapes_and_bands() {
        let img = Array3::from_elem((3, 64, 64), 0.5f32);
        let r = ReferenceImage::new(img.clone(), None).unwrap();
        let lat = encode_reference(&r, 64, 64).unwrap();
        assert_eq!(lat.dim(), (1, 768, 8, 8));
        assert_eq!(decode(&lat).unwrap().frame(0), img.view());

        let wide = ReferenceImage::new(Array3::from_elem((3, 32, 64), 0.5f32), None).unwrap();
        let canvas = letterbox_reference(&wide, 64, 64);
        for y in 0..64 {
            let expected = if (16..48).contains(&y) { 0.5 } else { 0.0 };
            assert!(
                canvas.slice(s![.., y, ..]).iter().all(|&v| (v - expected).abs() < 1e-6),
                "row {y}"
            );
        }

        let odd = ReferenceImage::new(Array3::from_elem((3, 30, 50), 0.7f32), None).unwrap();
        assert_eq!(encode_reference(&odd, 64, 64).unwrap().dim(), (1, 768, 8, 8));
    }

    #[test]
    fn mask_latent_shapes_and_values() {
        let ones = MaskSequence::new(Array3::ones((17, 64, 64))).unwrap();
        let lat = downsample_mask(&ones).unwrap();
        assert_eq!(lat.dim(), (5, 4, 8, 8));
        assert!(lat.data().iter().all(|&v| v == 1));

        let mut one = Array3::zeros((17, 64, 64));
        one[[6, 21, 42]] = 1;
        let lat = downsample_mask(&MaskSequence::new(one).unwrap()).unwrap();
        let hits: Vec<_> = lat
            .data()
            .indexed_iter()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
            .collect();
        // pixel frame 6 = latent frame 2 (frames 5..=8), slot 1
        assert_eq!(hits, vec![(2, 1, 2, 5)]);
    }

    #[test]
    fn covers_maps_latent_channels_to_mask_slots() {
        let mut m = Array4::zeros((2, 4, 2, 2));
        m[[1, 3, 0, 1]] = 1;
        let ml = MaskLatent::new(m).unwrap();
        assert!(ml.covers(1, channel_index(0, 3, 7, 7), 0, 1));
        assert!(ml.covers(1, channel_index(2, 3, 0, 0), 0, 1));
        assert!(!ml.covers(1, channel_index(2, 2, 0, 0), 0, 1));
    }
}
