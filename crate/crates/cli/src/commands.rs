//! Subcommand implementations. Each returns a JSON summary printed on stdout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};
use vidswap_core::codec::{downsample_mask, encode, encode_reference, LatentBlock, LATENT_CHANNELS};
use vidswap_core::data::{self, generate_scene, load_manifest, write_dataset, ManifestLine};
use vidswap_core::denoiser::{save_checkpoint, train, TrainState};
use vidswap_core::eval::{cases_from_dataset, run_bench};
use vidswap_core::frames::{
    load_clip_folder, load_mask_folder, load_reference_png, save_clip_folder, save_mask_folder,
};
use vidswap_core::fusion::assemble;
use vidswap_core::inference::{SwapModel, SwapRequest, Swapper};
use vidswap_core::mask_augment::{augment, AugmentMode};
use vidswap_core::pose::PoseSequence;
use vidswap_core::tensor_io::{save_tensor, Tensor};
use vidswap_core::video::{make_agnostic, MaskSequence};

use crate::config::GlobalConfig;

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn gen_data(cfg: &GlobalConfig, out: &Path, count: usize) -> anyhow::Result<Value> {
    if count == 0 {
        bail!(vidswap_core::Error::Config("scene count must be at least 1".into()));
    }
    let scenes = (0..count as u64)
        .map(|i| generate_scene(cfg.seed.wrapping_add(i), &cfg.scene))
        .collect::<vidswap_core::Result<Vec<_>>>()?;
    let lines = write_dataset(out, &scenes)?;
    Ok(json!({
        "scenes": scenes.len(),
        "records": lines.len(),
        "manifest": out.join("manifest.jsonl"),
    }))
}

/// Rewrites manifest paths so they resolve from `new_root`.
fn rebase(line: &ManifestLine, old_root: &Path, new_root: &Path) -> ManifestLine {
    if old_root == new_root {
        return line.clone();
    }
    let fix = |p: &Path| -> PathBuf {
        let abs = old_root.join(p);
        fs::canonicalize(&abs).unwrap_or(abs)
    };
    ManifestLine {
        frames: fix(&line.frames),
        mask: fix(&line.mask),
        pose: line.pose.as_deref().map(fix),
        ..line.clone()
    }
}

pub fn filter_dataset(cfg: &GlobalConfig, manifest: &Path, out: &Path) -> anyhow::Result<Value> {
    cfg.filter.validate()?;
    let entries = load_manifest(manifest)?;
    let outcome = data::filter(&entries, |e| e.line.stats, &cfg.filter);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let balanced = data::balance(&outcome.kept, |e| e.line.category, &cfg.filter, &mut rng);
    let new_root = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let lines: Vec<ManifestLine> = balanced
        .selected
        .iter()
        .map(|e| rebase(&e.line, &e.root, &new_root))
        .collect();
    data::save_manifest(out, &lines)?;

    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    for (_, r) in &outcome.rejected {
        *reasons.entry(format!("{r:?}").to_lowercase()).or_default() += 1;
    }
    let counts = |c: [usize; 4]| -> BTreeMap<&str, usize> {
        data::Category::ALL.iter().map(|k| (k.name(), c[k.index()])).collect()
    };
    Ok(json!({
        "input": entries.len(),
        "kept_after_filter": outcome.kept.len(),
        "rejected": reasons,
        "available": counts(balanced.available),
        "selected": counts(balanced.counts),
        "feasible": balanced.feasible,
        "manifest": out,
    }))
}

pub fn augment_mask(cfg: &GlobalConfig, mask: &Path, mode: AugmentMode, out: &Path) -> anyhow::Result<Value> {
    let m = load_mask_folder(mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = augment(&m, mode, &cfg.augment, &mut rng)?;
    save_mask_folder(out, &a.mask)?;
    write_json(&out.join("augment_record.json"), &a.record)?;
    Ok(json!({ "frames": a.mask.frames(), "path": a.record.path, "out": out }))
}

fn load_pose(path: Option<&Path>) -> anyhow::Result<Option<PoseSequence>> {
    Ok(match path {
        Some(p) => Some(PoseSequence::load_json(p)?),
        None => None,
    })
}

pub struct InputPaths<'a> {
    pub clip: &'a Path,
    pub mask: &'a Path,
    pub reference: &'a Path,
    pub pose: Option<&'a Path>,
}

/// Writes the fused tensor, attention mask and loss mask as VTEN files. The
/// noisy stream is pure noise (`t = 1`) and the dummy stream holds frame 0.
pub fn build_input(cfg: &GlobalConfig, input: &InputPaths, out: &Path) -> anyhow::Result<Value> {
    let clip = load_clip_folder(input.clip)?;
    let mask = load_mask_folder(input.mask)?;
    let reference = load_reference_png(input.reference)?;
    let pose = load_pose(input.pose)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let aug = augment(&mask, AugmentMode::Inference, &cfg.augment, &mut rng)?.mask;
    let agnostic = encode(&make_agnostic(&clip, &aug)?)?.to_model_space();
    let pose_latent = match &pose {
        Some(p) => encode(&p.render()?)?.to_model_space(),
        None => LatentBlock::zeros(agnostic.frames(), LATENT_CHANNELS, agnostic.dim().2, agnostic.dim().3),
    };
    let first = encode(&clip.slice_frames(0, 1)?)?.to_model_space();
    let reference = encode_reference(&reference, clip.height(), clip.width())?.to_model_space();
    let noise = ndarray::Array4::from_shape_simple_fn(agnostic.dim(), || {
        let v: f64 = StandardNormal.sample(&mut rng);
        v as f32
    });
    let fused = assemble(
        &LatentBlock::new(noise)?,
        &agnostic,
        &pose_latent,
        &downsample_mask(&aug)?,
        &reference,
        Some(&first),
        &cfg.fusion,
    )?;
    fs::create_dir_all(out)?;
    save_tensor(out.join("fused.vten"), &Tensor::F32(fused.tensor.clone().into_dyn()))?;
    let attn = fused.attention_mask.dense().mapv(u8::from).into_dyn();
    save_tensor(out.join("attention_mask.vten"), &Tensor::U8(attn))?;
    let loss = ArrayD::from_shape_vec(
        IxDyn(&[fused.loss_mask.len()]),
        fused.loss_mask.iter().map(|&b| u8::from(b)).collect(),
    )?;
    save_tensor(out.join("loss_mask.vten"), &Tensor::U8(loss))?;
    Ok(json!({
        "fused_shape": fused.tensor.shape(),
        "tokens": fused.layout.total_tokens(),
        "forbidden_attention": fused.attention_mask.forbidden_count(),
        "out": out,
    }))
}

pub fn train_toy(cfg: &GlobalConfig, manifest: &Path, out: &Path) -> anyhow::Result<Value> {
    let entries = load_manifest(manifest)?;
    if entries.is_empty() {
        bail!(vidswap_core::Error::Config("training manifest is empty".into()));
    }
    let mut clips: BTreeMap<PathBuf, Arc<vidswap_core::VideoClip>> = BTreeMap::new();
    let mut samples = Vec::with_capacity(entries.len());
    for e in &entries {
        let key = e.root.join(&e.line.frames);
        let clip = match clips.get(&key) {
            Some(c) => c.clone(),
            None => {
                let c = Arc::new(e.load_clip()?);
                clips.insert(key, c.clone());
                c
            }
        };
        samples.push(e.load_record()?.to_training_sample(clip)?);
    }
    let mut state = TrainState::new(cfg.model, &cfg.train, cfg.seed)?;
    fs::create_dir_all(out)?;
    let mut log = csv::Writer::from_path(out.join("loss.csv"))?;
    log.write_record(["step", "loss", "l_background", "l_rw", "used", "skipped"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut io_error = None;
    let report = train(&samples, &mut state, &cfg.train, &cfg.augment, &cfg.fusion, |s| {
        let row = [
            s.step.to_string(),
            opt(s.loss),
            opt(s.l_background),
            opt(s.l_rw),
            s.used.to_string(),
            s.skipped.to_string(),
        ];
        if let Err(e) = log.write_record(row) {
            io_error.get_or_insert(e);
        }
        if s.step % 100 == 0 {
            log::info!("step {} loss {:?}", s.step, s.loss);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    log.flush()?;
    let n = report.steps.len();
    let window = n.min(100);
    let initial = report.mean_loss(0..window);
    let fin = report.mean_loss(n - window..n);
    save_checkpoint(out, &state.model, state.step, fin)?;
    Ok(json!({
        "samples": samples.len(),
        "steps": n,
        "skipped": report.skipped,
        "initial_loss": initial,
        "final_loss": fin,
        "seconds": report.seconds,
        "checkpoint": out,
    }))
}

pub struct InferArgs<'a> {
    pub input: InputPaths<'a>,
    pub weights: &'a Path,
    pub first_frame: Option<&'a Path>,
    pub out: &'a Path,
}

pub fn infer(cfg: &GlobalConfig, args: &InferArgs) -> anyhow::Result<Value> {
    let model = SwapModel::load(args.weights)?;
    let clip = load_clip_folder(args.input.clip)?;
    let mask: MaskSequence = load_mask_folder(args.input.mask)?;
    let reference = load_reference_png(args.input.reference)?;
    let mut req = SwapRequest::new(clip, mask, reference);
    req.pose = load_pose(args.input.pose)?;
    req.steps = cfg.sampler.steps;
    req.seed = cfg.seed;
    if let Some(p) = args.first_frame {
        req.first_frame_override = Some(load_image_png(p)?);
    }
    let out = model.swap(&req, &cfg.swap_config())?;
    save_clip_folder(args.out.join("frames"), &out.clip)?;
    save_mask_folder(args.out.join("aug_mask"), &out.aug_mask)?;
    write_json(&args.out.join("report.json"), &out.report)?;
    Ok(json!({
        "frames": out.clip.frames(),
        "tunnel_active": out.report.tunnel.active,
        "segments": out.report.segments.len(),
        "out": args.out,
    }))
}

/// A single PNG as a `(3, H, W)` image.
fn load_image_png(path: &Path) -> anyhow::Result<ndarray::Array3<f32>> {
    let r = load_reference_png(path)?;
    Ok(r.image().clone())
}

pub struct EvalArgs<'a> {
    pub manifest: &'a Path,
    pub weights: &'a Path,
    pub limit: Option<usize>,
    pub out: &'a Path,
}

pub fn eval(cfg: &GlobalConfig, args: &EvalArgs) -> anyhow::Result<Value> {
    let model = SwapModel::load(args.weights)?;
    let mut entries = load_manifest(args.manifest)?;
    if let Some(l) = args.limit {
        entries.truncate(l);
    }
    let cases = cases_from_dataset(&entries, cfg.sampler.steps, cfg.seed)?;
    let report = run_bench(&cases, &model, &cfg.swap_config(), cfg.eval.dilation);
    fs::create_dir_all(args.out)?;
    report.save_json(args.out.join("report.json"))?;
    report.save_csv(args.out.join("report.csv"))?;
    Ok(json!({
        "metric_version": report.metric_version,
        "aggregate": report.aggregate,
        "out": args.out,
    }))
}
