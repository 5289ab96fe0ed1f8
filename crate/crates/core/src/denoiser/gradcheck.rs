//! Central finite-difference check of analytic parameter gradients.

use rand::Rng;

use super::loss::loss_and_grad;
use super::model::Model;
use super::train::PreparedSample;
use crate::{Error, Result};

/// Relative errors use `max(|analytic|, |numeric|, FLOOR)` as denominator.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(parameter name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: (String, usize, f64, f64),
}

fn loss_of(model: &Model<f64>, s: &PreparedSample, lambda: f64) -> Result<f64> {
    let pred = model.forward(&s.fused, s.t)?;
    Ok(
        loss_and_grad(&pred.view(), &s.target, &s.fused.loss_mask, &s.subject_mask, lambda)?
            .0
            .l_final,
    )
}

/// Compares analytic gradients of the reweighted loss with central differences
/// on `coords` parameter coordinates drawn uniformly over all parameters.
pub fn grad_check<R: Rng + ?Sized>(
    model: &mut Model<f64>,
    sample: &PreparedSample,
    lambda: f64,
    eps: f64,
    coords: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference step {eps} outside [1e-5, 1e-2]"
        )));
    }
    check_with_step(model, sample, lambda, eps, coords, rng)
}

fn check_with_step<R: Rng + ?Sized>(
    model: &mut Model<f64>,
    sample: &PreparedSample,
    lambda: f64,
    eps: f64,
    coords: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (pred, cache) = model.forward_with_cache(&sample.fused, sample.t)?;
    let (_, dpred) = loss_and_grad(
        &pred.view(),
        &sample.target,
        &sample.fused.loss_mask,
        &sample.subject_mask,
        lambda,
    )?;
    let grads = model.backward(&cache, &dpred.view());
    let grads: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.iter().copied().collect()))
        .collect();
    let total: usize = grads.iter().map(|(_, g)| g.len()).sum();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: (String::new(), 0, 0.0, 0.0),
    };
    for _ in 0..coords {
        let mut flat = rng.random_range(0..total);
        let ti = grads
            .iter()
            .position(|(_, g)| {
                if flat < g.len() {
                    true
                } else {
                    flat -= g.len();
                    false
                }
            })
            .expect("index within total");
        let analytic = grads[ti].1[flat];
        let perturb = |model: &mut Model<f64>, delta: f64| {
            let mut tensors = model.params.tensors_mut();
            let v = tensors[ti].1.iter_mut().nth(flat).expect("in range");
            *v += delta;
        };
        perturb(model, eps);
        let plus = loss_of(model, sample, lambda)?;
        perturb(model, -2.0 * eps);
        let minus = loss_of(model, sample, lambda)?;
        perturb(model, eps);
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        report.checked += 1;
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (grads[ti].0.clone(), flat, analytic, numeric);
        }
    }
    Ok(report)
}
