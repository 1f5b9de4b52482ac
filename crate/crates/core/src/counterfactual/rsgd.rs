use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::baselines::normalized;
use super::{cg_solve, latent_classification_loss, BaselineConfig, CounterfactualMethod, CounterfactualProblem, RunReport, StepRecord};
use crate::error::{Error, Result};
use crate::geometry::{AmbientMetric, MetricPack};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RsgdVariant {
    /// Euclidean metric on the generator output.
    PixelPullback,
    /// Gram of the classifier's penultimate features.
    ClassifierFeaturePullback,
}

impl RsgdVariant {
    /// Geometry the natural gradient is taken in for this problem.
    pub fn metric_pack(self, problem: &CounterfactualProblem) -> Result<MetricPack> {
        let generator = problem.generator().clone();
        match self {
            RsgdVariant::PixelPullback => Ok(MetricPack::euclidean(generator)),
            RsgdVariant::ClassifierFeaturePullback => {
                let features = problem
                    .head
                    .penultimate()
                    .ok_or_else(|| Error::Config("rsgd_c needs a classifier with a penultimate feature map".into()))?
                    .clone();
                MetricPack::new(generator, AmbientMetric::composite(vec![(features, 1.0)])?)
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            RsgdVariant::PixelPullback => "rsgd",
            RsgdVariant::ClassifierFeaturePullback => "rsgd_c",
        }
    }
}

/// `G_Z(z)⁻¹ grad` by matrix-free conjugate gradients.
pub fn natural_gradient_direction(pack: &MetricPack, z: &Vector, grad: &Vector, tol: f64, max_iter: usize) -> Result<Vector> {
    let out = cg_solve(|u| pack.metric_apply_unchecked(z, u), grad, tol, max_iter)?;
    if !out.converged {
        log::debug!(
            "CG stopped after {} iterations with relative residual {:e}",
            out.iterations,
            out.relative_residual
        );
    }
    Ok(out.solution)
}

/// `z ← z − η r/‖r‖` with `G_Z r = ∇ℓ`.
pub fn rsgd(problem: &CounterfactualProblem, cfg: &BaselineConfig, variant: RsgdVariant, learning_rate: f64) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let pack = variant.metric_pack(problem)?;
    let generator = problem.generator();
    let mut config = serde_json::to_value(cfg)?;
    config["variant"] = serde_json::to_value(variant)?;
    let mut report = RunReport::new(variant.name(), config, learning_rate, problem);
    let max_iter = cfg.cg_iterations(pack.latent_dim());

    let mut z = problem.z0.clone();
    report.trajectory.push(z.iter().copied().collect());
    for step in 1..=cfg.steps {
        let (loss, grad) = latent_classification_loss(&problem.head, generator, &z)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                what: "non-finite loss".into(),
            });
        }
        report.trace.push(StepRecord {
            step,
            lambda: None,
            energy: None,
            distance: None,
            classification_loss: loss,
            objective: loss,
        });
        let r = natural_gradient_direction(&pack, &z, &grad, cfg.cg_tolerance, max_iter).map_err(|e| match e {
            Error::NotPositiveDefinite { curvature, .. } => Error::Diverged {
                step,
                what: format!("metric not positive definite (curvature {curvature:e})"),
            },
            other => other,
        })?;
        z -= normalized(&r, learning_rate);
        report.trajectory.push(z.iter().copied().collect());
    }
    report.finish(generator, &z)?;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct RsgdMethod {
    cfg: BaselineConfig,
    variant: RsgdVariant,
}

impl RsgdMethod {
    pub fn new(cfg: BaselineConfig, variant: RsgdVariant) -> Self {
        Self { cfg, variant }
    }
}

impl CounterfactualMethod for RsgdMethod {
    fn name(&self) -> &'static str {
        self.variant.name()
    }

    fn learning_rate_candidates(&self) -> Vec<f64> {
        self.cfg.learning_rates.clone()
    }

    fn default_learning_rate(&self) -> f64 {
        self.cfg.learning_rates[0]
    }

    fn config_echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(&self.cfg).unwrap_or_default();
        v["variant"] = serde_json::to_value(self.variant).unwrap_or_default();
        v
    }

    fn run(&self, problem: &CounterfactualProblem, learning_rate: f64) -> Result<RunReport> {
        rsgd(problem, &self.cfg, self.variant, learning_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::counterfactual::{vsgd, ClassifierHead, StepRule};
    use crate::diffmap::{Activation, Identity, LinearMap, MapRef, MlpMap};
    use crate::Matrix;

    fn problem_with(generator: MapRef) -> CounterfactualProblem {
        let n = generator.out_dim();
        let logits: MapRef = Arc::new(MlpMap::seeded(&[n, 6, 2], Activation::default(), 17).unwrap());
        let head = ClassifierHead::new(logits, 1).unwrap();
        let z0 = Vector::from_fn(generator.in_dim(), |i, _| 0.3 - 0.2 * i as f64);
        CounterfactualProblem::new(z0.clone(), z0, head, MetricPack::euclidean(generator)).unwrap()
    }

    fn max_deviation(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_generator_matches_normalized_vsgd() {
        let p = problem_with(Arc::new(Identity::new(3).unwrap()));
        let cfg = BaselineConfig {
            steps: 100,
            step_rule: StepRule::Normalized,
            ..Default::default()
        };
        let a = rsgd(&p, &cfg, RsgdVariant::PixelPullback, 1e-2).unwrap();
        let b = vsgd(&p, &cfg, 1e-2).unwrap();
        assert!(max_deviation(&a.trajectory, &b.trajectory) < 1e-10);
    }

    #[test]
    fn orthogonal_generator_matches_normalized_vsgd() {
        let (c, s) = (0.6f64, 0.8f64);
        let q = Matrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let p = problem_with(Arc::new(LinearMap::without_bias(q).unwrap()));
        let cfg = BaselineConfig {
            steps: 100,
            step_rule: StepRule::Normalized,
            ..Default::default()
        };
        let a = rsgd(&p, &cfg, RsgdVariant::PixelPullback, 1e-2).unwrap();
        let b = vsgd(&p, &cfg, 1e-2).unwrap();
        assert!(max_deviation(&a.trajectory, &b.trajectory) < 1e-10);
    }

    #[test]
    fn anisotropic_direction_matches_dense_solve() {
        let g: MapRef = Arc::new(LinearMap::without_bias(Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 10.0]))).unwrap());
        let pack = MetricPack::euclidean(g);
        let z = Vector::from_vec(vec![0.2, -0.4]);
        let grad = Vector::from_vec(vec![0.7, 1.3]);
        let r = natural_gradient_direction(&pack, &z, &grad, 1e-12, 20).unwrap();
        let dense = pack.metric_at(&z).unwrap().tensor.cholesky().unwrap().solve(&grad);
        let angle = (r.dot(&dense) / (r.norm() * dense.norm())).clamp(-1.0, 1.0).acos();
        assert!(angle < 1e-6);
        assert!(grad.dot(&r) > 0.0);
    }

    #[test]
    fn feature_variant_requires_penultimate_map() {
        let p = problem_with(Arc::new(Identity::new(2).unwrap()));
        assert!(matches!(
            rsgd(&p, &BaselineConfig::default(), RsgdVariant::ClassifierFeaturePullback, 1e-3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn feature_variant_runs_with_penultimate_map() {
        let mut p = problem_with(Arc::new(LinearMap::without_bias(Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0])).unwrap()));
        let feats: MapRef = Arc::new(MlpMap::seeded(&[3, 5, 4], Activation::default(), 2).unwrap());
        let logits: MapRef = Arc::new(MlpMap::seeded(&[3, 5, 2], Activation::default(), 3).unwrap());
        p.head = ClassifierHead::new(logits, 1).unwrap().with_penultimate(feats).unwrap();
        let cfg = BaselineConfig {
            steps: 20,
            ..Default::default()
        };
        let r = rsgd(&p, &cfg, RsgdVariant::ClassifierFeaturePullback, 1e-2).unwrap();
        assert_eq!(r.method, "rsgd_c");
        let step = Vector::from_column_slice(&r.trajectory[1]) - Vector::from_column_slice(&r.trajectory[0]);
        assert!((step.norm() - 1e-2).abs() < 1e-12);
    }
}
