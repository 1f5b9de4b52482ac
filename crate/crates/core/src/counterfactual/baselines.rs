use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{latent_classification_loss, CounterfactualMethod, CounterfactualProblem, RunReport, StepRecord};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::Vector;

/// How a single-point baseline turns a gradient into a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    #[default]
    AdaptiveMoment,
    /// `z ← z − η ∇/‖∇‖`.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub steps: usize,
    pub learning_rates: Vec<f64>,
    pub step_rule: StepRule,
    pub lambda0: f64,
    pub lambda_factor: f64,
    pub lambda_period: usize,
    pub cg_tolerance: f64,
    /// Defaults to `10·d` when absent.
    pub cg_max_iter: Option<usize>,
    /// REVISE only: halve a step (up to 20 times) until the objective does
    /// not increase.
    pub backtracking: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rates: vec![1e-4, 3e-4, 1e-3, 1e-2],
            step_rule: StepRule::AdaptiveMoment,
            lambda0: 1e-4,
            lambda_factor: 5.0,
            lambda_period: 50,
            cg_tolerance: 1e-8,
            cg_max_iter: None,
            backtracking: false,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() {
            return Err(Error::Config("baseline learning-rate candidates must be non-empty".into()));
        }
        if self.learning_rates.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config("baseline learning rates must be positive".into()));
        }
        if self.steps < 1 || self.lambda_period < 1 {
            return Err(Error::Config("baseline steps and lambda period must be >= 1".into()));
        }
        if !(self.lambda0 >= 0.0) || !(self.lambda_factor >= 1.0) || !(self.cg_tolerance > 0.0) {
            return Err(Error::Config("invalid baseline schedule or CG tolerance".into()));
        }
        Ok(())
    }

    pub fn lambda_at(&self, step: usize) -> f64 {
        self.lambda0 * self.lambda_factor.powi((step / self.lambda_period) as i32)
    }

    pub fn cg_iterations(&self, dim: usize) -> usize {
        self.cg_max_iter.unwrap_or(10 * dim)
    }
}

/// Stateful step rule for a single latent point.
pub(crate) enum PointStepper {
    Adam(Optimizer),
    Normalized(f64),
}

impl PointStepper {
    pub(crate) fn new(rule: StepRule, lr: f64) -> Self {
        match rule {
            StepRule::AdaptiveMoment => PointStepper::Adam(Optimizer::new(OptimizerKind::AdaptiveMoment, lr)),
            StepRule::Normalized => PointStepper::Normalized(lr),
        }
    }

    pub(crate) fn displacement(&mut self, grad: &Vector) -> Vector {
        match self {
            PointStepper::Adam(opt) => opt.step(std::slice::from_ref(grad)).pop().unwrap(),
            PointStepper::Normalized(lr) => normalized(grad, *lr),
        }
    }
}

pub(crate) fn normalized(v: &Vector, lr: f64) -> Vector {
    let n = v.norm();
    if n > 0.0 {
        v * (lr / n)
    } else {
        Vector::zeros(v.len())
    }
}

fn diverged(step: usize) -> Error {
    Error::Diverged {
        step,
        what: "non-finite loss".into(),
    }
}

/// `‖g(z) − g(z0)‖ + λ_s ℓ(f(g(z)), y')`, descended from `z0`.
pub fn revise(problem: &CounterfactualProblem, cfg: &BaselineConfig, learning_rate: f64) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let generator = problem.generator();
    let head = &problem.head;
    let mut report = RunReport::new("revise", serde_json::to_value(cfg)?, learning_rate, problem);
    let x_star = generator.value(&problem.z0)?;

    let objective = |z: &Vector, lambda: f64| -> Result<(f64, f64, f64, Vector)> {
        let x = generator.value(z)?;
        let dx = &x - &x_star;
        let dist = dx.norm();
        let (loss, loss_grad) = latent_classification_loss(head, generator, z)?;
        let mut grad = loss_grad * lambda;
        if dist > 0.0 {
            grad += generator.pull_back(z, &(dx / dist));
        }
        Ok((dist + lambda * loss, dist, loss, grad))
    };

    let mut z = problem.z0.clone();
    report.trajectory.push(z.iter().copied().collect());
    let mut stepper = PointStepper::new(cfg.step_rule, learning_rate);
    for step in 1..=cfg.steps {
        let lambda = cfg.lambda_at(step);
        let (value, dist, loss, grad) = objective(&z, lambda)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(step));
        }
        report.trace.push(StepRecord {
            step,
            lambda: Some(lambda),
            energy: None,
            distance: Some(dist),
            classification_loss: loss,
            objective: value,
        });
        let delta = stepper.displacement(&grad);
        if cfg.backtracking {
            let mut scale = 1.0;
            for _ in 0..=MAX_HALVINGS {
                let candidate = &z - &delta * scale;
                if objective(&candidate, lambda)?.0 <= value {
                    z = candidate;
                    break;
                }
                scale *= 0.5;
            }
        } else {
            z -= delta;
        }
        report.trajectory.push(z.iter().copied().collect());
    }
    report.finish(generator, &z)?;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

const MAX_HALVINGS: usize = 20;

/// Descends the classification loss alone from `z0`.
pub fn vsgd(problem: &CounterfactualProblem, cfg: &BaselineConfig, learning_rate: f64) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let generator = problem.generator();
    let mut report = RunReport::new("vsgd", serde_json::to_value(cfg)?, learning_rate, problem);
    let mut z = problem.z0.clone();
    report.trajectory.push(z.iter().copied().collect());
    let mut stepper = PointStepper::new(cfg.step_rule, learning_rate);
    for step in 1..=cfg.steps {
        let (loss, grad) = latent_classification_loss(&problem.head, generator, &z)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged(step));
        }
        report.trace.push(StepRecord {
            step,
            lambda: None,
            energy: None,
            distance: None,
            classification_loss: loss,
            objective: loss,
        });
        z -= stepper.displacement(&grad);
        report.trajectory.push(z.iter().copied().collect());
    }
    report.finish(generator, &z)?;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ReviseMethod {
    cfg: BaselineConfig,
}

impl ReviseMethod {
    pub fn new(cfg: BaselineConfig) -> Self {
        Self { cfg }
    }
}

impl CounterfactualMethod for ReviseMethod {
    fn name(&self) -> &'static str {
        "revise"
    }

    fn learning_rate_candidates(&self) -> Vec<f64> {
        self.cfg.learning_rates.clone()
    }

    fn default_learning_rate(&self) -> f64 {
        self.cfg.learning_rates[0]
    }

    fn config_echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).unwrap_or_default()
    }

    fn run(&self, problem: &CounterfactualProblem, learning_rate: f64) -> Result<RunReport> {
        revise(problem, &self.cfg, learning_rate)
    }
}

#[derive(Debug, Clone)]
pub struct VsgdMethod {
    cfg: BaselineConfig,
}

impl VsgdMethod {
    pub fn new(cfg: BaselineConfig) -> Self {
        Self { cfg }
    }
}

impl CounterfactualMethod for VsgdMethod {
    fn name(&self) -> &'static str {
        "vsgd"
    }

    fn learning_rate_candidates(&self) -> Vec<f64> {
        self.cfg.learning_rates.clone()
    }

    fn default_learning_rate(&self) -> f64 {
        self.cfg.learning_rates[0]
    }

    fn config_echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).unwrap_or_default()
    }

    fn run(&self, problem: &CounterfactualProblem, learning_rate: f64) -> Result<RunReport> {
        vsgd(problem, &self.cfg, learning_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::counterfactual::ClassifierHead;
    use crate::diffmap::{LinearMap, MapRef};
    use crate::geometry::MetricPack;
    use crate::Matrix;

    fn linear_problem(z0: [f64; 2], logit_scale: f64) -> CounterfactualProblem {
        let g: MapRef = Arc::new(LinearMap::without_bias(Matrix::from_row_slice(3, 2, &[1.0, 0.5, 0.0, 2.0, -1.0, 1.0])).unwrap());
        let a = Matrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 1.0, -0.5, 0.25]) * logit_scale;
        let logits: MapRef = Arc::new(LinearMap::without_bias(a).unwrap());
        let head = ClassifierHead::new(logits, 1).unwrap();
        let z0 = Vector::from_vec(z0.to_vec());
        CounterfactualProblem::new(z0.clone(), z0, head, MetricPack::euclidean(g)).unwrap()
    }

    #[test]
    fn zero_lambda_revise_never_gets_worse() {
        let p = linear_problem([-1.0, 0.3], 1.0);
        let cfg = BaselineConfig {
            lambda0: 0.0,
            lambda_factor: 1.0,
            backtracking: true,
            steps: 50,
            ..Default::default()
        };
        let r = revise(&p, &cfg, 1e-2).unwrap();
        let first = r.trace.first().unwrap().objective;
        let last = r.trace.last().unwrap().objective;
        assert!(last <= first);
    }

    #[test]
    fn saturated_input_barely_moves_under_revise() {
        // logit margin ~ 200 at z0, so the classification gradient underflows
        let p = linear_problem([2.0, 1.5], 200.0);
        assert!(p.head.is_target(&p.generator().value(&p.z0).unwrap()).unwrap());
        let cfg = BaselineConfig {
            lambda0: 1e3,
            ..Default::default()
        };
        let lr = 1e-3;
        let r = revise(&p, &cfg, lr).unwrap();
        assert!((r.final_latent_vector() - &p.z0).norm() < lr * 10.0);
    }

    #[test]
    fn saturated_input_has_negligible_vsgd_gradient() {
        let p = linear_problem([2.0, 1.5], 200.0);
        let (_, g) = latent_classification_loss(&p.head, p.generator(), &p.z0).unwrap();
        assert!(g.norm() < 1e-6);
    }

    #[test]
    fn linear_models_give_collinear_vsgd_steps() {
        let p = linear_problem([-1.0, 0.3], 1.0);
        let cfg = BaselineConfig {
            steps: 40,
            ..Default::default()
        };
        let r = vsgd(&p, &cfg, 1e-2).unwrap();
        let steps: Vec<Vector> = r
            .trajectory
            .windows(2)
            .map(|w| Vector::from_column_slice(&w[1]) - Vector::from_column_slice(&w[0]))
            .collect();
        for s in steps.windows(2) {
            let cos = s[0].dot(&s[1]) / (s[0].norm() * s[1].norm());
            assert!(cos > 0.999, "cos = {cos}");
        }
    }

    #[test]
    fn vsgd_flips_a_linear_classifier() {
        let p = linear_problem([-1.0, 0.3], 1.0);
        let r = vsgd(&p, &BaselineConfig::default(), 1e-2).unwrap();
        assert!(p.head.is_target(&r.final_ambient_vector()).unwrap());
        assert_eq!(r.trajectory.len(), 501);
    }

    #[test]
    fn empty_candidate_set_is_rejected() {
        let cfg = BaselineConfig {
            learning_rates: vec![],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
