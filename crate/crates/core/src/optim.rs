//! First-order update rules shared by the path solver and the baselines.

use serde::{Deserialize, Serialize};

use crate::Vector;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `x ← x − η ∇`.
    PlainGradient,
    /// Bias-corrected Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    AdaptiveMoment,
}

/// Stateful update rule over a block of vectors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    first: Vec<Vector>,
    second: Vec<Vector>,
    steps: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// The displacement to subtract from the parameters for these gradients.
    pub fn step(&mut self, grads: &[Vector]) -> Vec<Vector> {
        match self.kind {
            OptimizerKind::PlainGradient => grads.iter().map(|g| g * self.learning_rate).collect(),
            OptimizerKind::AdaptiveMoment => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| Vector::zeros(g.len())).collect();
                    self.second = self.first.clone();
                }
                self.steps += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
                grads
                    .iter()
                    .zip(self.first.iter_mut().zip(self.second.iter_mut()))
                    .map(|(g, (m, v))| {
                        *m = &*m * ADAM_BETA1 + g * (1.0 - ADAM_BETA1);
                        *v = &*v * ADAM_BETA2 + g.component_mul(g) * (1.0 - ADAM_BETA2);
                        m.zip_map(v, |mi, vi| {
                            self.learning_rate * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS)
                        })
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step_scales_gradient() {
        let mut opt = Optimizer::new(OptimizerKind::PlainGradient, 0.1);
        let s = opt.step(&[Vector::from_vec(vec![1.0, -2.0])]);
        assert_eq!(s[0], Vector::from_vec(vec![0.1, -0.2]));
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let mut opt = Optimizer::new(OptimizerKind::AdaptiveMoment, 1e-3);
        let s = opt.step(&[Vector::from_vec(vec![5.0, -0.01])]);
        assert!((s[0][0] - 1e-3).abs() < 1e-9);
        assert!((s[0][1] + 1e-3).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::AdaptiveMoment, 0.05);
        let mut x = Vector::from_vec(vec![3.0, -2.0]);
        for _ in 0..2000 {
            let g = x.component_mul(&Vector::from_vec(vec![1.0, 10.0]));
            x -= &opt.step(&[g])[0];
        }
        assert!(x.amax() < 1e-2);
    }
}
