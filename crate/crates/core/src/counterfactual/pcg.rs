use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{latent_classification_loss, CounterfactualMethod, CounterfactualProblem, ReanchorEvent, RunReport, StepRecord};
use crate::error::{Error, Result};
use crate::geometry::{path_energy_gradient, EndpointPolicy, LatentPath};
use crate::linalg::quadratic_form;
use crate::optim::{Optimizer, OptimizerKind};
use crate::paths::{densify_midpoints, init_linear, phase1_geodesic, Phase1Config};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationLossKind {
    #[default]
    CrossEntropyOnLogits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase2Config {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub lambda0: f64,
    pub lambda_factor: f64,
    pub lambda_period: usize,
    pub reanchor_period: usize,
    pub loss: ClassificationLossKind,
}

impl Default for Phase2Config {
    fn default() -> Self {
        Self {
            steps: 300,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::PlainGradient,
            lambda0: 1e-4,
            lambda_factor: 5.0,
            lambda_period: 50,
            reanchor_period: 50,
            loss: ClassificationLossKind::CrossEntropyOnLogits,
        }
    }
}

impl Phase2Config {
    /// `λ_s = λ₀ · factor^⌊s / period⌋` for the 1-based step `s`.
    pub fn lambda_at(&self, step: usize) -> f64 {
        self.lambda0 * self.lambda_factor.powi((step / self.lambda_period) as i32)
    }

    /// A static schedule (`factor = 1`) and `λ₀ = 0` are accepted so the
    /// ablations can be expressed.
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 || self.lambda_period < 1 || self.reanchor_period < 1 {
            return Err(Error::Config("phase-2 step counts and periods must be >= 1".into()));
        }
        if self.reanchor_period > self.steps {
            return Err(Error::Config("reanchor_period must not exceed phase-2 steps".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("phase-2 learning rate must be positive".into()));
        }
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) || !(self.lambda_factor >= 1.0 && self.lambda_factor.is_finite()) {
            return Err(Error::Config("lambda0 must be >= 0 and lambda_factor >= 1".into()));
        }
        Ok(())
    }
}

/// Induced distance `√(ΔxᵀG Δx)` of `g(z)` from the reference ambient point
/// under a fixed ambient metric.
pub fn induced_distance_to(generator: &crate::diffmap::MapRef, metric: &Matrix, reference: &Vector, z: &Vector) -> Result<f64> {
    let dx = generator.value(z)? - reference;
    Ok(quadratic_form(metric, &dx).max(0.0).sqrt())
}

/// Two-phase search: a fixed-endpoint geodesic towards the exemplar, then a
/// free-endpoint descent of `E + λ_s ℓ` with periodic re-anchoring.
pub fn pcg(
    problem: &CounterfactualProblem,
    cfg1: &Phase1Config,
    cfg2: &Phase2Config,
    segments: usize,
) -> Result<RunReport> {
    cfg1.validate()?;
    cfg2.validate()?;
    if segments < 2 {
        return Err(Error::Config("pcg needs T >= 2".into()));
    }
    let started = Instant::now();
    let pack = &problem.pack;
    let generator = pack.generator();
    let head = &problem.head;
    let mut report = RunReport::new(
        "pcg",
        serde_json::json!({ "phase1": cfg1, "phase2": cfg2, "segments": segments }),
        cfg2.learning_rate,
        problem,
    );

    if !head.is_target(&generator.value(&problem.exemplar)?)? {
        warn!("target exemplar is not classified as class {}", head.target());
    }

    let x0 = generator.value(&problem.z0)?;
    let reference_metric = pack.ambient().metric_at(&x0)?;
    let distance = |z: &Vector| induced_distance_to(generator, &reference_metric, &x0, z);

    let initial = init_linear(&problem.z0, &problem.exemplar, segments)?;
    let solved = phase1_geodesic(&initial, pack, cfg1)?;
    report.phase1_trace = solved.trace;
    let mut path = solved.path.with_policy(EndpointPolicy::EndFree);

    let mut opt = Optimizer::new(cfg2.optimizer, cfg2.learning_rate);
    for step in 1..=cfg2.steps {
        let lambda = cfg2.lambda_at(step);
        let (energy, mut grads) = path_energy_gradient(&path, pack)?;
        let (loss, loss_grad) = latent_classification_loss(head, generator, path.end())?;
        grads[segments] += &loss_grad * lambda;
        let objective = energy + lambda * loss;
        let movable = &grads[1..];
        if !objective.is_finite() || movable.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged {
                step,
                what: "non-finite phase-2 objective".into(),
            });
        }
        report.trace.push(StepRecord {
            step,
            lambda: Some(lambda),
            energy: Some(energy),
            distance: None,
            classification_loss: loss,
            objective,
        });
        let update = opt.step(movable);
        for (p, u) in path.points_mut()[1..].iter_mut().zip(&update) {
            *p -= u;
        }

        if step % cfg2.reanchor_period == 0 {
            let before = distance(path.end())?;
            let event = reanchor(&path, head, generator, &distance)?;
            match event {
                Some((index, after)) => {
                    path = densify_midpoints(&path, index)?;
                    opt = Optimizer::new(cfg2.optimizer, cfg2.learning_rate);
                    report.reanchor_events.push(ReanchorEvent {
                        step,
                        chosen_index: Some(index),
                        distance_before: before,
                        distance_after: after,
                    });
                }
                None => {
                    info!("re-anchoring skipped at step {step}: no path point classified as target");
                    report.reanchor_events.push(ReanchorEvent {
                        step,
                        chosen_index: None,
                        distance_before: before,
                        distance_after: before,
                    });
                }
            }
        }
    }

    report.finish(generator, path.end())?;
    report.path = Some(path.with_policy(EndpointPolicy::BothFixed));
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Closest target-classified point among indices `1..=T`; ties go to the
/// lowest index.
fn reanchor<F>(
    path: &LatentPath,
    head: &super::ClassifierHead,
    generator: &crate::diffmap::MapRef,
    distance: &F,
) -> Result<Option<(usize, f64)>>
where
    F: Fn(&Vector) -> Result<f64>,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, z) in path.points().iter().enumerate().skip(1) {
        if !head.is_target(&generator.value(z)?)? {
            continue;
        }
        let d = distance(z)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct PcgMethod {
    phase1: Phase1Config,
    phase2: Phase2Config,
    segments: usize,
}

impl PcgMethod {
    pub fn new(phase1: Phase1Config, phase2: Phase2Config, segments: usize) -> Self {
        Self { phase1, phase2, segments }
    }
}

impl CounterfactualMethod for PcgMethod {
    fn name(&self) -> &'static str {
        "pcg"
    }

    fn learning_rate_candidates(&self) -> Vec<f64> {
        Vec::new()
    }

    fn default_learning_rate(&self) -> f64 {
        self.phase2.learning_rate
    }

    fn config_echo(&self) -> serde_json::Value {
        serde_json::json!({ "phase1": self.phase1, "phase2": self.phase2, "segments": self.segments })
    }

    fn run(&self, problem: &CounterfactualProblem, learning_rate: f64) -> Result<RunReport> {
        let mut phase2 = self.phase2.clone();
        phase2.learning_rate = learning_rate;
        pcg(problem, &self.phase1, &phase2, self.segments)
    }
}
