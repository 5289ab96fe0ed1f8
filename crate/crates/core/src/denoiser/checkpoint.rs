//! Checkpoints: a directory with one VTEN file per named parameter and a
//! `meta.json` holding the model config and training progress.

use std::fs;
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::model::Model;
use super::DenoiserConfig;
use crate::tensor_io::{load_tensor, save_tensor, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "vidswap-checkpoint-v1";
const META: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: String,
    pub config: DenoiserConfig,
    pub trained_steps: usize,
    pub final_loss: Option<f64>,
}

pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    model: &Model<f32>,
    trained_steps: usize,
    final_loss: Option<f64>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, t) in model.params.tensors() {
        save_tensor(dir.join(format!("{name}.vten")), &Tensor::F32(t.to_owned()))?;
    }
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config,
        trained_steps,
        final_loss,
    };
    let path = dir.join(META);
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(Model<f32>, CheckpointMeta)> {
    let dir = dir.as_ref();
    let path = dir.join(META);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(Error::Config(format!(
            "unsupported checkpoint format {:?}",
            meta.format
        )));
    }
    let mut model = Model::<f32>::new(meta.config)?;
    for (name, mut dst) in model.params.tensors_mut() {
        let src: ArrayD<f32> = load_tensor(dir.join(format!("{name}.vten")))?.into_f32()?;
        if src.shape() != dst.shape() {
            return Err(Error::Shape(format!(
                "checkpoint tensor {name} has shape {:?}, expected {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        dst.assign(&src);
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = DenoiserConfig {
            dim: 8,
            layers: 1,
            heads: 2,
            time_dim: 4,
            seed: 5,
            ..Default::default()
        };
        let model = Model::<f32>::new(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, 7, Some(0.25)).unwrap();
        let (back, meta) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!((meta.trained_steps, meta.final_loss), (7, Some(0.25)));
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let cfg = DenoiserConfig {
            dim: 8,
            layers: 1,
            heads: 2,
            time_dim: 4,
            ..Default::default()
        };
        let model = Model::<f32>::new(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &model, 1, None).unwrap();
        std::fs::remove_file(dir.path().join("head.w.vten")).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
