//! Deterministic Euler integration of the learned velocity field from noise to data.

use ndarray::{s, Array4};

use crate::codec::LatentBlock;
use crate::denoiser::Model;
use crate::fusion::{DummySource, FusedInput};
use crate::{Error, Result};

/// Integrates `dx/dt = v(x, t)` from `t = 1` (pure `noise`) to `t = 0` in
/// `steps` uniform steps. The reference keys and values are computed once.
///
/// Under [`DummySource::Noisy`] the dummy frame tracks the current diffusion
/// time: `(1 - t)·first + t·noise[0]` when a first frame is known, otherwise
/// the current estimate's frame 0.
pub fn euler_sample(
    model: &Model<f32>,
    fused: &mut FusedInput,
    noise: Array4<f32>,
    first_frame: Option<&LatentBlock>,
    dummy: DummySource,
    steps: usize,
) -> Result<Array4<f32>> {
    if steps == 0 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    let cache = model.ref_cache(fused)?;
    let noise0 = noise.slice(s![0, .., .., ..]).to_owned();
    let mut x = noise;
    for i in 0..steps {
        let t = 1.0 - i as f64 / steps as f64;
        let t_next = 1.0 - (i + 1) as f64 / steps as f64;
        fused.set_noisy_video(&x)?;
        if dummy == DummySource::Noisy {
            let frame = match first_frame {
                Some(ff) => {
                    let clean = ff.data().slice(s![0, .., .., ..]);
                    let tf = t as f32;
                    ndarray::Zip::from(&clean)
                        .and(&noise0)
                        .map_collect(|&c, &n| (1.0 - tf) * c + tf * n)
                }
                None => x.slice(s![0, .., .., ..]).to_owned(),
            };
            fused.set_dummy_first_frame(&frame.view());
        }
        let v = model.predict_video(fused, t, &cache)?;
        x.scaled_add((t_next - t) as f32, &v);
    }
    Ok(x)
}
