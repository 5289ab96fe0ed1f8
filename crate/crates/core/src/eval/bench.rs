//! Benchmark runner: one swap per case, both metrics, JSON and CSV reports.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{background_preservation, reference_appearance, METRIC_VERSION};
use crate::data::DatasetEntry;
use crate::inference::{SwapConfig, SwapRequest, Swapper};
use crate::video::extract_reference;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct BenchCase {
    pub name: String,
    pub request: SwapRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    /// `None` when the case failed or had no background pixels.
    pub background_preservation: Option<f64>,
    pub reference_appearance: Option<f64>,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cases: usize,
    pub failed: usize,
    /// Arithmetic means over the cases that produced the score.
    pub background_preservation: Option<f64>,
    pub reference_appearance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric_version: String,
    pub dilation: usize,
    pub cases: Vec<CaseResult>,
    pub aggregate: Aggregate,
    pub seconds: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate(cases: &[CaseResult]) -> Aggregate {
    Aggregate {
        cases: cases.len(),
        failed: cases.iter().filter(|c| c.error.is_some()).count(),
        background_preservation: mean(cases.iter().filter_map(|c| c.background_preservation)),
        reference_appearance: mean(cases.iter().filter_map(|c| c.reference_appearance)),
    }
}

fn run_case(case: &BenchCase, swapper: &dyn Swapper, cfg: &SwapConfig, dilation: usize) -> Result<(Option<f64>, f64)> {
    let out = swapper.swap(&case.request, cfg)?;
    let bg = background_preservation(&case.request.clip, &out.clip, &case.request.mask, dilation)?;
    let ra = reference_appearance(&case.request.reference, &out.clip, &case.request.mask)?;
    Ok((bg, ra))
}

/// Runs every case in order; a failing case is recorded and the run continues.
pub fn run_bench(cases: &[BenchCase], swapper: &dyn Swapper, cfg: &SwapConfig, dilation: usize) -> EvalReport {
    let started = Instant::now();
    let results: Vec<CaseResult> = cases
        .iter()
        .map(|case| {
            let t0 = Instant::now();
            let r = run_case(case, swapper, cfg, dilation);
            let seconds = t0.elapsed().as_secs_f64();
            match r {
                Ok((bg, ra)) => CaseResult {
                    name: case.name.clone(),
                    background_preservation: bg,
                    reference_appearance: Some(ra),
                    seconds,
                    error: None,
                },
                Err(e) => {
                    log::warn!("case {} failed: {e}", case.name);
                    CaseResult {
                        name: case.name.clone(),
                        background_preservation: None,
                        reference_appearance: None,
                        seconds,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    EvalReport {
        metric_version: METRIC_VERSION.to_string(),
        dilation,
        aggregate: aggregate(&results),
        cases: results,
        seconds: started.elapsed().as_secs_f64(),
    }
}

/// Cases from dataset entries: each subject is swapped with a reference cut
/// from its own first nonempty frame.
pub fn cases_from_dataset(entries: &[DatasetEntry], steps: usize, seed: u64) -> Result<Vec<BenchCase>> {
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let clip = e.load_clip()?;
            let record = e.load_record()?;
            let frame = (0..record.mask.frames())
                .find(|&t| !record.mask.is_empty_frame(t))
                .ok_or(Error::NoSubject)?;
            let reference = extract_reference(&clip, &record.mask, frame)?;
            let mut request = SwapRequest::new(clip, record.mask, reference);
            request.pose = record.pose;
            request.steps = steps;
            request.seed = seed.wrapping_add(i as u64);
            Ok(BenchCase {
                name: format!("{}/{}", e.line.clip_id, e.line.category),
                request,
            })
        })
        .collect()
}

impl EvalReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(
            &fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        )?)
    }

    /// One row per case: name, both scores (empty when absent), seconds, error.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record([
            "name",
            "background_preservation",
            "reference_appearance",
            "seconds",
            "error",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cases {
            w.write_record([
                c.name.clone(),
                opt(c.background_preservation),
                opt(c.reference_appearance),
                c.seconds.to_string(),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{SwapOutput, SwapReport, Tunnel};
    use crate::mask_augment::{AugmentMode, AugmentPath, AugmentRecord};
    use crate::video::{BBox, MaskSequence, VideoClip};
    use ndarray::{s, Array3, Array4};

    /// Returns the source clip unchanged.
    struct Identity;

    impl Swapper for Identity {
        fn swap(&self, req: &SwapRequest, _cfg: &SwapConfig) -> Result<SwapOutput> {
            if req.seed == 99 {
                return Err(Error::InvalidValue("scripted failure".into()));
            }
            let (h, w) = (req.clip.height(), req.clip.width());
            Ok(SwapOutput {
                clip: req.clip.clone(),
                aug_mask: req.mask.clone(),
                report: SwapReport {
                    tunnel: Tunnel {
                        bbox: BBox::full(w, h),
                        active: false,
                        area_ratio: req.mask.mean_area_ratio(),
                        threshold: 0.05,
                        margin: 1.5,
                    },
                    segments: Vec::new(),
                    augment: AugmentRecord {
                        mode: AugmentMode::Inference,
                        path: AugmentPath::Grid,
                        grid: None,
                        k_per_frame: Vec::new(),
                        shapes: Vec::new(),
                    },
                    steps: req.steps,
                    seed: req.seed,
                    seconds: 0.0,
                },
            })
        }
    }

    fn case(i: u64) -> BenchCase {
        let clip = VideoClip::new(Array4::from_shape_fn((5, 3, 32, 32), |(t, c, y, x)| {
            ((t as u64 + c as u64 + (y * x) as u64 + i) % 11) as f32 / 10.0
        }))
        .unwrap();
        let mut m = Array3::zeros((5, 32, 32));
        m.slice_mut(s![.., 4..12, 4..12]).fill(1);
        let mask = MaskSequence::new(m).unwrap();
        let reference = extract_reference(&clip, &mask, 0).unwrap();
        let mut request = SwapRequest::new(clip, mask, reference);
        request.seed = i;
        BenchCase {
            name: format!("case{i}"),
            request,
        }
    }

    #[test]
    fn identity_swapper_preserves_background() {
        let cases: Vec<_> = (0..4).map(case).collect();
        let r = run_bench(&cases, &Identity, &SwapConfig::default(), 8);
        assert_eq!(r.cases.len(), cases.len());
        assert!(r.cases.iter().all(|c| c.background_preservation == Some(1.0)));
        assert_eq!(r.aggregate.background_preservation, Some(1.0));
        let oracle: f64 = r.cases.iter().map(|c| c.reference_appearance.unwrap()).sum::<f64>() / 4.0;
        assert!((r.aggregate.reference_appearance.unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn failures_are_recorded_and_the_run_continues() {
        let cases = vec![case(1), case(99), case(2)];
        let r = run_bench(&cases, &Identity, &SwapConfig::default(), 8);
        assert_eq!(r.cases.len(), 3);
        assert_eq!(r.aggregate.failed, 1);
        assert!(r.cases[1].error.is_some());
        assert!(r.cases[2].error.is_none());
    }

    #[test]
    fn report_round_trips() {
        let r = run_bench(&[case(3)], &Identity, &SwapConfig::default(), 8);
        let dir = tempfile::tempdir().unwrap();
        r.save_json(dir.path().join("r.json")).unwrap();
        assert_eq!(EvalReport::load_json(dir.path().join("r.json")).unwrap(), r);
        r.save_csv(dir.path().join("r.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
