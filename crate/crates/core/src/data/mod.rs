//! Synthetic dataset generation, quality filtering and category balancing.

mod manifest;
mod scene;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::TrainingSample;
use crate::pose::PoseSequence;
use crate::video::{MaskSequence, VideoClip};
use crate::{Error, Result};

pub use manifest::{load_manifest, save_manifest, write_dataset, DatasetEntry, ManifestLine};
pub use scene::{clip_id, generate_scene, held_object_mask, Scene, SceneSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Human,
    Garment,
    SmallObject,
    LargeObject,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Human,
        Category::Garment,
        Category::SmallObject,
        Category::LargeObject,
    ];

    /// Position in [`Category::ALL`] and in [`FilterConfig::target_ratio`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Human => "human",
            Category::Garment => "garment",
            Category::SmallObject => "small_object",
            Category::LargeObject => "large_object",
        }
    }

    /// Large objects are scene-scale and carry no body pose.
    pub fn carries_pose(self) -> bool {
        self != Category::LargeObject
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectStats {
    pub area_ratio: f64,
    pub coverage: f64,
    pub motion: f64,
}

#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub clip_id: String,
    pub category: Category,
    pub mask: MaskSequence,
    pub pose: Option<PoseSequence>,
    pub stats: SubjectStats,
}

impl SubjectRecord {
    pub fn to_training_sample(&self, clip: Arc<VideoClip>) -> Result<TrainingSample> {
        if !clip.same_dims(&self.mask) {
            return Err(Error::Shape(format!(
                "clip and mask of {} disagree in size",
                self.clip_id
            )));
        }
        Ok(TrainingSample {
            clip,
            mask: self.mask.clone(),
            pose: self.pose.clone(),
        })
    }
}

fn centroid(mask: &MaskSequence, t: usize) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for ((y, x), &v) in mask.frame(t).indexed_iter() {
        if v != 0 {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// Area ratio, temporal coverage and motion amplitude of a mask sequence.
///
/// Motion is the largest centroid displacement between consecutive nonempty
/// frames, divided by the frame diagonal and clamped to 1.
pub fn compute_stats(mask: &MaskSequence) -> SubjectStats {
    let frames = mask.frames();
    if frames == 0 {
        return SubjectStats {
            area_ratio: 0.0,
            coverage: 0.0,
            motion: 0.0,
        };
    }
    let nonempty = (0..frames).filter(|&t| !mask.is_empty_frame(t)).count();
    let diag = ((mask.height() as f64).powi(2) + (mask.width() as f64).powi(2)).sqrt();
    let centroids: Vec<_> = (0..frames).map(|t| centroid(mask, t)).collect();
    let motion = centroids
        .windows(2)
        .filter_map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()),
            _ => None,
        })
        .fold(0.0, f64::max);
    SubjectStats {
        area_ratio: mask.mean_area_ratio(),
        coverage: nonempty as f64 / frames as f64,
        motion: (motion / diag).min(1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    /// Keep subjects that move at least the threshold.
    AtLeast,
    /// Keep subjects that move at most the threshold.
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub area_min: f64,
    pub area_max: f64,
    pub coverage_min: f64,
    pub motion_threshold: f64,
    pub motion_comparator: Comparator,
    /// Relative counts in [`Category::ALL`] order.
    pub target_ratio: [f64; 4],
    pub ratio_tolerance: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            area_min: 0.01,
            area_max: 0.8,
            coverage_min: 0.9,
            motion_threshold: 0.02,
            motion_comparator: Comparator::AtLeast,
            target_ratio: [1.0, 0.2, 1.0, 1.0],
            ratio_tolerance: 0.1,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.area_min && self.area_min < self.area_max && self.area_max <= 1.0) {
            return Err(Error::Config(format!(
                "area bounds must satisfy 0 <= min < max <= 1, got [{}, {}]",
                self.area_min, self.area_max
            )));
        }
        if !(0.0..=1.0).contains(&self.coverage_min) || !(0.0..=1.0).contains(&self.motion_threshold) {
            return Err(Error::Config(
                "coverage and motion thresholds must lie in [0, 1]".into(),
            ));
        }
        if self.target_ratio.iter().any(|r| !r.is_finite() || *r < 0.0) || self.target_ratio.iter().all(|r| *r == 0.0) {
            return Err(Error::Config(
                "target ratio must be non-negative with a positive entry".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ratio_tolerance) {
            return Err(Error::Config("ratio tolerance must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Area,
    Coverage,
    Motion,
}

/// First failing criterion, checked in the order area, coverage, motion.
pub fn check(stats: &SubjectStats, cfg: &FilterConfig) -> Option<RejectReason> {
    if stats.area_ratio < cfg.area_min || stats.area_ratio > cfg.area_max {
        return Some(RejectReason::Area);
    }
    if stats.coverage < cfg.coverage_min {
        return Some(RejectReason::Coverage);
    }
    let motion_ok = match cfg.motion_comparator {
        Comparator::AtLeast => stats.motion >= cfg.motion_threshold,
        Comparator::AtMost => stats.motion <= cfg.motion_threshold,
    };
    (!motion_ok).then_some(RejectReason::Motion)
}

#[derive(Debug, Clone)]
pub struct FilterOutcome<R> {
    pub kept: Vec<R>,
    pub rejected: Vec<(R, RejectReason)>,
}

/// Splits records by [`check`]; relative input order is preserved on both sides.
pub fn filter<R: Clone>(records: &[R], stats: impl Fn(&R) -> SubjectStats, cfg: &FilterConfig) -> FilterOutcome<R> {
    let mut out = FilterOutcome {
        kept: Vec::new(),
        rejected: Vec::new(),
    };
    for r in records {
        match check(&stats(r), cfg) {
            None => out.kept.push(r.clone()),
            Some(reason) => out.rejected.push((r.clone(), reason)),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct BalanceOutcome<R> {
    pub selected: Vec<R>,
    /// Available and selected counts in [`Category::ALL`] order.
    pub available: [usize; 4],
    pub counts: [usize; 4],
    pub feasible: bool,
}

/// Per-category quotas anchored to the scarcest nonempty category.
///
/// `u = min(count / ratio)` over categories with a positive ratio and at least
/// one record; each quota is `min(count, round(u * ratio))`. The result is
/// feasible iff no such category is empty and every quota is within the
/// tolerance of `u * ratio`.
pub fn balance_quotas(available: [usize; 4], cfg: &FilterConfig) -> ([usize; 4], bool) {
    let active: Vec<usize> = (0..4).filter(|&i| cfg.target_ratio[i] > 0.0).collect();
    let unit = active
        .iter()
        .filter(|&&i| available[i] > 0)
        .map(|&i| available[i] as f64 / cfg.target_ratio[i])
        .fold(f64::INFINITY, f64::min);
    let mut quotas = [0usize; 4];
    if !unit.is_finite() {
        return (quotas, false);
    }
    let mut feasible = true;
    for &i in &active {
        let ideal = unit * cfg.target_ratio[i];
        quotas[i] = available[i].min(ideal.round() as usize);
        if available[i] == 0 || (quotas[i] as f64 - ideal).abs() > cfg.ratio_tolerance * ideal {
            feasible = false;
        }
    }
    (quotas, feasible)
}

/// Uniformly down-samples each category to its quota; never up-samples.
pub fn balance<R: Clone, G: Rng + ?Sized>(
    records: &[R],
    category: impl Fn(&R) -> Category,
    cfg: &FilterConfig,
    rng: &mut G,
) -> BalanceOutcome<R> {
    let mut by_cat: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_cat.entry(category(r)).or_default().push(i);
    }
    let mut available = [0usize; 4];
    for (c, v) in &by_cat {
        available[c.index()] = v.len();
    }
    let (quotas, feasible) = balance_quotas(available, cfg);
    let mut chosen = Vec::new();
    for c in Category::ALL {
        let Some(idx) = by_cat.get_mut(&c) else { continue };
        idx.shuffle(rng);
        chosen.extend_from_slice(&idx[..quotas[c.index()]]);
    }
    chosen.sort_unstable();
    BalanceOutcome {
        selected: chosen.into_iter().map(|i| records[i].clone()).collect(),
        available,
        counts: quotas,
        feasible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moving_square(frames: usize, step: usize) -> MaskSequence {
        let mut m = Array3::zeros((frames, 64, 64));
        for t in 0..frames {
            for y in 10..18 {
                for x in t * step..t * step + 8 {
                    m[[t, y, x]] = 1;
                }
            }
        }
        MaskSequence::new(m).unwrap()
    }

    #[test]
    fn full_static_mask() {
        let m = MaskSequence::new(Array3::from_elem((5, 8, 8), 1)).unwrap();
        let s = compute_stats(&m);
        assert_eq!((s.area_ratio, s.coverage, s.motion), (1.0, 1.0, 0.0));
    }

    #[test]
    fn coverage_counts_nonempty_frames() {
        let mut m = Array3::zeros((100, 4, 4));
        for t in 0..40 {
            m[[t, 1, 1]] = 1;
        }
        let s = compute_stats(&MaskSequence::new(m).unwrap());
        assert!((s.coverage - 0.4).abs() < 1e-12);
        assert_eq!(check(&s, &FilterConfig::default()), Some(RejectReason::Coverage));
    }

    #[test]
    fn motion_of_a_translating_square() {
        let s = compute_stats(&moving_square(6, 8));
        let oracle = 8.0 / (64.0f64 * 64.0 * 2.0).sqrt();
        assert!((s.motion - oracle).abs() < 1e-12);
        assert!((s.motion - 0.0884).abs() < 1e-4);
        assert_eq!(check(&s, &FilterConfig::default()), None);
    }

    #[test]
    fn comparator_flips_motion_criterion() {
        let s = SubjectStats {
            area_ratio: 0.1,
            coverage: 1.0,
            motion: 0.5,
        };
        let cfg = FilterConfig {
            motion_comparator: Comparator::AtMost,
            ..Default::default()
        };
        assert_eq!(check(&s, &cfg), Some(RejectReason::Motion));
        assert_eq!(check(&s, &FilterConfig::default()), None);
    }

    fn records(counts: [usize; 4]) -> Vec<(usize, Category)> {
        let mut v = Vec::new();
        for c in Category::ALL {
            for _ in 0..counts[c.index()] {
                v.push((v.len(), c));
            }
        }
        v
    }

    fn run(counts: [usize; 4]) -> BalanceOutcome<(usize, Category)> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        balance(&records(counts), |r| r.1, &FilterConfig::default(), &mut rng)
    }

    #[test]
    fn balance_exact_ratio_keeps_everything() {
        let out = run([100, 20, 100, 100]);
        assert!(out.feasible);
        assert_eq!(out.counts, [100, 20, 100, 100]);
        assert_eq!(out.selected.len(), 320);
    }

    #[test]
    fn balance_downsamples_excess_humans() {
        let out = run([200, 20, 100, 100]);
        assert!(out.feasible);
        assert_eq!(out.counts, [100, 20, 100, 100]);
        assert_eq!(out.selected.iter().filter(|r| r.1 == Category::Human).count(), 100);
    }

    #[test]
    fn balance_flags_empty_category() {
        let out = run([10, 0, 10, 10]);
        assert!(!out.feasible);
        assert_eq!(out.counts[Category::Garment.index()], 0);
        assert_eq!(out.counts, [10, 0, 10, 10]);
    }

    #[test]
    fn balance_is_seed_deterministic() {
        let a = run([57, 13, 80, 44]);
        let b = run([57, 13, 80, 44]);
        assert_eq!(a.selected, b.selected);
    }

    #[test]
    fn invalid_area_bounds_rejected() {
        let cfg = FilterConfig {
            area_min: 0.5,
            area_max: 0.4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(FilterConfig::default().validate().is_ok());
    }
}
