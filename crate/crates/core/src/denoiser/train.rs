//! Sample preparation, single training steps and the training loop.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{flow_target, gaussian_like, loss_and_grad};
use super::model::Model;
use super::optim::RmsProp;
use super::refaug::augment_reference;
use super::{DenoiserConfig, TrainConfig};
use crate::codec::{downsample_mask, encode, encode_reference, LatentBlock, MaskLatent, LATENT_CHANNELS};
use crate::fusion::{assemble, FusedInput, FusionConfig};
use crate::mask_augment::{augment, AugmentConfig, AugmentMode};
use crate::pose::PoseSequence;
use crate::video::{extract_reference, make_agnostic, MaskSequence, VideoClip};
use crate::{Error, Result};

/// One subject of one clip.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub clip: Arc<VideoClip>,
    pub mask: MaskSequence,
    pub pose: Option<PoseSequence>,
}

/// A fully assembled training example.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub fused: FusedInput,
    /// Velocity target over the video frames.
    pub target: LatentBlock,
    /// Raw (unaugmented) subject mask, used for loss reweighting.
    pub subject_mask: MaskLatent,
    pub t: f64,
}

/// Pose stream latent in model space; all zero when there is no pose.
pub(crate) fn pose_latent(pose: Option<&PoseSequence>, clip: &VideoClip) -> Result<LatentBlock> {
    match pose {
        Some(p) => {
            if (p.len(), p.height, p.width) != (clip.frames(), clip.height(), clip.width()) {
                return Err(Error::Shape(format!(
                    "pose ({} frames, {}x{}) does not match clip ({} frames, {}x{})",
                    p.len(),
                    p.height,
                    p.width,
                    clip.frames(),
                    clip.height(),
                    clip.width()
                )));
            }
            Ok(encode(&p.render()?)?.to_model_space())
        }
        None => {
            let f = crate::codec::latent_frames(clip.frames());
            Ok(LatentBlock::zeros(
                f,
                LATENT_CHANNELS,
                clip.height() / 8,
                clip.width() / 8,
            ))
        }
    }
}

/// Draws a reference frame, augments reference and mask, encodes every stream,
/// draws noise and diffusion time, and assembles the fused input.
pub fn prepare_sample<R: Rng + ?Sized>(
    sample: &TrainingSample,
    train: &TrainConfig,
    aug: &AugmentConfig,
    fusion: &FusionConfig,
    rng: &mut R,
) -> Result<PreparedSample> {
    let clip = sample.clip.as_ref();
    let nonempty: Vec<usize> = (0..sample.mask.frames())
        .filter(|&t| !sample.mask.is_empty_frame(t))
        .collect();
    if nonempty.is_empty() {
        return Err(Error::NoSubject);
    }
    let frame = nonempty[rng.random_range(0..nonempty.len())];
    let reference = augment_reference(&extract_reference(clip, &sample.mask, frame)?, train, rng)?;
    let augmented = augment(&sample.mask, AugmentMode::Train, aug, rng)?;
    let agnostic = make_agnostic(clip, &augmented.mask)?;

    let x0 = encode(clip)?.to_model_space();
    let agn = encode(&agnostic)?.to_model_space();
    let pose = pose_latent(sample.pose.as_ref(), clip)?;
    let mask_latent = downsample_mask(&augmented.mask)?;
    let subject_mask = downsample_mask(&sample.mask)?;
    let ref_latent = encode_reference(&reference, clip.height(), clip.width())?.to_model_space();
    let with_first = rng.random::<f64>() < train.p_first_frame;

    let noise = gaussian_like(x0.dim(), rng);
    let t = rng.random::<f64>();
    let (xt, target) = flow_target(&x0, &noise, t)?;
    let fused = assemble(
        &xt,
        &agn,
        &pose,
        &mask_latent,
        &ref_latent,
        with_first.then_some(&x0),
        fusion,
    )?;
    Ok(PreparedSample {
        fused,
        target,
        subject_mask,
        t,
    })
}

pub struct TrainState {
    pub model: Model<f32>,
    pub optimizer: RmsProp<f32>,
    pub rng: ChaCha8Rng,
    pub step: usize,
    /// Samples skipped because their subject mask was empty.
    pub skipped: usize,
}

impl TrainState {
    pub fn new(model_cfg: DenoiserConfig, train: &TrainConfig, seed: u64) -> Result<Self> {
        train.validate()?;
        let model = Model::new(model_cfg)?;
        Ok(Self::from_model(model, train, seed))
    }

    pub fn from_model(model: Model<f32>, train: &TrainConfig, seed: u64) -> Self {
        let optimizer = RmsProp::new(&model.params, train.lr, train.rms_beta, train.rms_eps);
        Self {
            model,
            optimizer,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
            skipped: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    /// Batch mean of the final loss; `None` if every sample was skipped.
    pub loss: Option<f64>,
    pub l_background: Option<f64>,
    pub l_rw: Option<f64>,
    pub used: usize,
    pub skipped: usize,
}

/// Prepares each sample, accumulates gradients over the batch and applies one
/// optimizer update. Samples with an empty subject are skipped and counted.
pub fn training_step(
    batch: &[&TrainingSample],
    state: &mut TrainState,
    train: &TrainConfig,
    aug: &AugmentConfig,
    fusion: &FusionConfig,
) -> Result<StepReport> {
    let mut grads = state.model.params.zeros_like();
    let mut sums = (0.0, 0.0, 0.0);
    let mut used = 0usize;
    let mut skipped = 0usize;
    for sample in batch {
        let prepared = match prepare_sample(sample, train, aug, fusion, &mut state.rng) {
            Ok(p) => p,
            Err(Error::NoSubject) | Err(Error::EmptySubjectFrame(_)) => {
                log::warn!("skipping a sample with an empty subject mask");
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let (pred, cache) = state.model.forward_with_cache(&prepared.fused, prepared.t)?;
        let (loss, dpred) = loss_and_grad(
            &pred.view(),
            &prepared.target,
            &prepared.fused.loss_mask,
            &prepared.subject_mask,
            train.lambda,
        )?;
        let g = state.model.backward(&cache, &dpred.view());
        for ((_, mut acc), (_, gi)) in grads.tensors_mut().into_iter().zip(g.tensors()) {
            acc += &gi;
        }
        sums.0 += loss.l_final;
        sums.1 += loss.l_background;
        sums.2 += loss.l_rw;
        used += 1;
    }
    state.skipped += skipped;
    state.step += 1;
    if used == 0 {
        return Ok(StepReport {
            step: state.step,
            loss: None,
            l_background: None,
            l_rw: None,
            used,
            skipped,
        });
    }
    let inv = 1.0 / used as f32;
    for (_, mut g) in grads.tensors_mut() {
        g *= inv;
    }
    state.optimizer.update(&mut state.model.params, &grads, train.trainable);
    let n = used as f64;
    Ok(StepReport {
        step: state.step,
        loss: Some(sums.0 / n),
        l_background: Some(sums.1 / n),
        l_rw: Some(sums.2 / n),
        used,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepReport>,
    pub skipped: usize,
    pub seconds: f64,
}

impl TrainReport {
    /// Mean loss over the given step range (steps without a loss are ignored).
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let v: Vec<f64> = self.steps[range].iter().filter_map(|s| s.loss).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Runs `train.steps` steps, drawing each batch uniformly with replacement.
pub fn train(
    samples: &[TrainingSample],
    state: &mut TrainState,
    train: &TrainConfig,
    aug: &AugmentConfig,
    fusion: &FusionConfig,
    mut on_step: impl FnMut(&StepReport),
) -> Result<TrainReport> {
    train.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let start = Instant::now();
    let mut steps = Vec::with_capacity(train.steps);
    for _ in 0..train.steps {
        let batch: Vec<&TrainingSample> = (0..train.batch)
            .map(|_| &samples[state.rng.random_range(0..samples.len())])
            .collect();
        let report = training_step(&batch, state, train, aug, fusion)?;
        on_step(&report);
        steps.push(report);
    }
    Ok(TrainReport {
        steps,
        skipped: state.skipped,
        seconds: start.elapsed().as_secs_f64(),
    })
}
