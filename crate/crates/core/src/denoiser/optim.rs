//! Momentum-free adaptive optimizer: per-coordinate step `lr · g / (√v̂ + ε)`
//! with a bias-corrected running mean of squared gradients `v`.

use ndarray::{ArrayD, Zip};

use super::model::{lit, Params, Real};
use super::Trainable;

#[derive(Debug, Clone)]
pub struct RmsProp<T> {
    pub lr: f64,
    pub beta: f64,
    pub eps: f64,
    pub step: u64,
    second_moment: Vec<ArrayD<T>>,
}

impl<T: Real> RmsProp<T> {
    pub fn new(params: &Params<T>, lr: f64, beta: f64, eps: f64) -> Self {
        Self {
            lr,
            beta,
            eps,
            step: 0,
            second_moment: params
                .tensors()
                .iter()
                .map(|(_, t)| ArrayD::zeros(t.raw_dim()))
                .collect(),
        }
    }

    pub fn update(&mut self, params: &mut Params<T>, grads: &Params<T>, trainable: Trainable) {
        self.step += 1;
        let beta: T = lit(self.beta);
        let one_minus: T = lit(1.0 - self.beta);
        let correction: T = lit(1.0 - self.beta.powi(self.step.min(i32::MAX as u64) as i32));
        let lr: T = lit(self.lr);
        let eps: T = lit(self.eps);
        let grads = grads.tensors();
        for (((name, mut p), (_, g)), v) in params.tensors_mut().into_iter().zip(grads).zip(&mut self.second_moment) {
            if !trainable.includes(&name) {
                continue;
            }
            Zip::from(&mut p).and(&g).and(v).for_each(|p, &g, v| {
                *v = beta * *v + one_minus * g * g;
                *p -= lr * g / ((*v / correction).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;

    #[test]
    fn first_step_moves_each_coordinate_by_about_lr() {
        let cfg = DenoiserConfig {
            dim: 8,
            layers: 1,
            heads: 2,
            time_dim: 4,
            ..Default::default()
        };
        let mut p = Params::<f64>::init(&cfg);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.head.b.fill(0.5);
        g.blocks[0].q.b.fill(-2.0);
        let mut opt = RmsProp::new(&p, 1e-3, 0.999, 1e-8);
        opt.update(&mut p, &g, Trainable::SelfAttention);
        assert_eq!(p.head, before.head);
        assert!(p.blocks[0]
            .q
            .b
            .iter()
            .zip(before.blocks[0].q.b.iter())
            .all(|(a, b)| ((a - b) - 1e-3).abs() < 1e-9));
    }
}
