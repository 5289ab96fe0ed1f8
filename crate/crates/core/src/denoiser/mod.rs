//! Toy diffusion transformer, flow-matching objective, subject-reweighted loss
//! and trainer.

mod checkpoint;
mod gradcheck;
mod loss;
mod model;
mod optim;
mod refaug;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{flow_target, loss_and_grad, loss_weights, reweighted_loss, LossBreakdown};
pub use model::{
    patchify, positional_embedding, time_features, unpatchify, Block, ForwardCache, LayerNorm, Linear, Model, Params,
    Real, RefCache, SKIP_GAINS,
};
pub use optim::RmsProp;
pub use refaug::{apply_ref_augment, augment_reference, RefAugmentParams};
pub(crate) use train::pose_latent;
pub use train::{
    prepare_sample, train, training_step, PreparedSample, StepReport, TrainReport, TrainState, TrainingSample,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub patch: usize,
    pub time_dim: usize,
    pub mlp_ratio: usize,
    /// Standard deviation of the output head's initial weights.
    pub head_init_std: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers: 4,
            heads: 4,
            patch: 2,
            time_dim: 128,
            mlp_ratio: 4,
            head_init_std: 0.01,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.dim < 6 || self.patch == 0 || self.mlp_ratio == 0 || self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::Config(
                "dim >= 6, patch >= 1, mlp_ratio >= 1 and an even time_dim >= 2 are required".into(),
            ));
        }
        if !(self.head_init_std >= 0.0 && self.head_init_std.is_finite()) {
            return Err(Error::Config("head_init_std must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Which parameters the optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    /// Only the attention projections (`blocks.*.attn.*`).
    SelfAttention,
    #[default]
    All,
}

impl Trainable {
    pub fn includes(self, name: &str) -> bool {
        match self {
            Trainable::All => true,
            Trainable::SelfAttention => name.contains(".attn."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Weight of the subject-region term of the reweighted loss.
    pub lambda: f64,
    pub ref_scale: [f64; 2],
    /// Rotation range in degrees, symmetric about 0.
    pub ref_rotation_deg: f64,
    pub ref_flip_prob: f64,
    /// Brightness shift range, symmetric about 0.
    pub ref_brightness: f64,
    /// Probability that a sample gets the clean first frame as dummy reference.
    pub p_first_frame: f64,
    pub rms_beta: f64,
    pub rms_eps: f64,
    pub trainable: Trainable,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 4,
            lr: 3e-4,
            lambda: 1.0,
            ref_scale: [0.7, 1.3],
            ref_rotation_deg: 15.0,
            ref_flip_prob: 0.5,
            ref_brightness: 0.2,
            p_first_frame: 0.5,
            rms_beta: 0.999,
            rms_eps: 1e-8,
            trainable: Trainable::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if self.batch == 0 {
            return bad("batch must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0 < self.ref_scale[0] && self.ref_scale[0] <= self.ref_scale[1]) {
            return bad("ref_scale must be a nonempty positive range");
        }
        if !(self.ref_rotation_deg >= 0.0 && self.ref_brightness >= 0.0) {
            return bad("rotation and brightness ranges must be >= 0");
        }
        for p in [self.ref_flip_prob, self.p_first_frame] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if !(0.0 < self.rms_beta && self.rms_beta < 1.0 && self.rms_eps > 0.0) {
            return bad("rms_beta must lie in (0, 1) and rms_eps must be positive");
        }
        Ok(())
    }
}
