//! The single JSON configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vidswap_core::codec::CodecSpec;
use vidswap_core::data::{FilterConfig, SceneSpec};
use vidswap_core::denoiser::{DenoiserConfig, TrainConfig};
use vidswap_core::eval::DEFAULT_DILATION;
use vidswap_core::fusion::FusionConfig;
use vidswap_core::inference::{SwapConfig, DEFAULT_SAMPLER_STEPS, TUNNEL_MARGIN, TUNNEL_THRESHOLD};
use vidswap_core::mask_augment::AugmentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints/toy".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub steps: usize,
    pub segment_length: usize,
    pub feather: usize,
    pub tunnel_threshold: f64,
    pub tunnel_margin: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            steps: DEFAULT_SAMPLER_STEPS,
            segment_length: 17,
            feather: 4,
            tunnel_threshold: TUNNEL_THRESHOLD,
            tunnel_margin: TUNNEL_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub dilation: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            dilation: DEFAULT_DILATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub seed: u64,
    pub paths: Paths,
    pub codec: CodecSpec,
    pub scene: SceneSpec,
    pub augment: AugmentConfig,
    pub fusion: FusionConfig,
    pub model: DenoiserConfig,
    pub train: TrainConfig,
    pub filter: FilterConfig,
    pub sampler: SamplerSettings,
    pub eval: EvalSettings,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            codec: CodecSpec::default(),
            scene: SceneSpec::default(),
            augment: AugmentConfig::default(),
            fusion: FusionConfig::default(),
            model: DenoiserConfig::default(),
            train: TrainConfig::default(),
            filter: FilterConfig::default(),
            sampler: SamplerSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl GlobalConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> vidswap_core::Result<()> {
        self.codec.validate()?;
        self.scene.validate()?;
        self.augment.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.filter.validate()?;
        Ok(())
    }

    pub fn swap_config(&self) -> SwapConfig {
        SwapConfig {
            segment_length: self.sampler.segment_length,
            feather: self.sampler.feather,
            tunnel_threshold: self.sampler.tunnel_threshold,
            tunnel_margin: self.sampler.tunnel_margin,
            augment: self.augment.clone(),
            fusion: self.fusion,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<GlobalConfig>(r#"{"seed": 1, "bogus": 2}"#).is_err());
        assert!(serde_json::from_str::<GlobalConfig>(r#"{"train": {"stepz": 2}}"#).is_err());
        let c: GlobalConfig = serde_json::from_str(r#"{"train": {"steps": 7}}"#).unwrap();
        assert_eq!(c.train.steps, 7);
        assert_eq!(c.train.batch, 4);
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = GlobalConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<GlobalConfig>(&text).unwrap(), c);
    }
}
