//! Counterfactual search: the two-phase geodesic method and four
//! single-point baselines.
//!
//! Every method implements [`CounterfactualMethod`] and is looked up by name
//! in a [`MethodRegistry`]; the harness only ever talks to the trait.

mod baselines;
mod cg;
mod pcg;
mod rsgd;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use baselines::{revise, vsgd, BaselineConfig, ReviseMethod, StepRule, VsgdMethod};
pub use cg::{cg_solve, CgOutcome};
pub use pcg::{pcg, induced_distance_to, PcgMethod, Phase2Config};
pub use rsgd::{natural_gradient_direction, rsgd, RsgdMethod, RsgdVariant};

use crate::diffmap::MapRef;
use crate::error::{check_len, Error, Result};
use crate::geometry::{LatentPath, MetricPack};
use crate::paths::{EnergyTraceRow, Phase1Config};
use crate::Vector;

/// Logit map plus the target class `y'`; optionally the penultimate
/// feature map the logits are read out from.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    logits: MapRef,
    penultimate: Option<MapRef>,
    target: usize,
}

impl ClassifierHead {
    pub fn new(logits: MapRef, target: usize) -> Result<Self> {
        let classes = logits.out_dim();
        if classes < 2 {
            return Err(Error::Config(format!("a classifier needs at least 2 classes, got {classes}")));
        }
        if target >= classes {
            return Err(Error::Config(format!("target class {target} out of range for {classes} classes")));
        }
        Ok(Self {
            logits,
            penultimate: None,
            target,
        })
    }

    pub fn with_penultimate(mut self, features: MapRef) -> Result<Self> {
        if features.in_dim() != self.logits.in_dim() {
            return Err(Error::Dimension(format!(
                "penultimate map takes {} inputs, classifier takes {}",
                features.in_dim(),
                self.logits.in_dim()
            )));
        }
        self.penultimate = Some(features);
        Ok(self)
    }

    pub fn retarget(&self, target: usize) -> Result<Self> {
        let mut head = Self::new(self.logits.clone(), target)?;
        head.penultimate = self.penultimate.clone();
        Ok(head)
    }

    pub fn logits(&self) -> &MapRef {
        &self.logits
    }

    pub fn penultimate(&self) -> Option<&MapRef> {
        self.penultimate.as_ref()
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn classes(&self) -> usize {
        self.logits.out_dim()
    }

    /// Argmax of the logits; ties go to the lowest class index.
    pub fn predict(&self, x: &Vector) -> Result<usize> {
        Ok(argmax(&self.logits.value(x)?))
    }

    pub fn is_target(&self, x: &Vector) -> Result<bool> {
        Ok(self.predict(x)? == self.target)
    }
}

pub(crate) fn argmax(v: &Vector) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of `softmax(logits(x))` against the head's target, and its
/// gradient with respect to `x`.
pub fn classification_loss(head: &ClassifierHead, x: &Vector) -> Result<(f64, Vector)> {
    let logits = head.logits.value(x)?;
    let max = logits.max();
    let shifted = logits.map(|l| (l - max).exp());
    let total: f64 = shifted.sum();
    let loss = total.ln() + max - logits[head.target];
    let mut dlogits = shifted / total;
    dlogits[head.target] -= 1.0;
    let grad = head.logits.pull_back(x, &dlogits);
    Ok((loss.max(0.0), grad))
}

/// Loss and latent gradient of the classification term at `z`.
pub(crate) fn latent_classification_loss(
    head: &ClassifierHead,
    generator: &MapRef,
    z: &Vector,
) -> Result<(f64, Vector)> {
    let x = generator.value(z)?;
    let (loss, gx) = classification_loss(head, &x)?;
    Ok((loss, generator.pull_back(z, &gx)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

/// One optimization step. Fields a method does not use are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lambda: Option<f64>,
    pub energy: Option<f64>,
    pub distance: Option<f64>,
    pub classification_loss: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReanchorEvent {
    pub step: usize,
    /// Path index promoted to endpoint; `None` when no point qualified.
    pub chosen_index: Option<usize>,
    pub distance_before: f64,
    pub distance_after: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: Option<u64>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: serde_json::Value,
    pub learning_rate: f64,
    pub target_class: usize,
    pub initial_latent: Vec<f64>,
    pub final_latent: Vec<f64>,
    pub final_ambient: Vec<f64>,
    /// Final latent path (path-based methods only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<LatentPath>,
    /// Iterates of single-point methods, starting with `z0`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phase1_trace: Vec<EnergyTraceRow>,
    pub trace: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reanchor_events: Vec<ReanchorEvent>,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub(crate) fn new(method: &str, config: serde_json::Value, learning_rate: f64, problem: &CounterfactualProblem) -> Self {
        Self {
            method: method.to_string(),
            seed: None,
            status: RunStatus::Ok,
            error: None,
            config,
            learning_rate,
            target_class: problem.head.target(),
            initial_latent: problem.z0.iter().copied().collect(),
            final_latent: Vec::new(),
            final_ambient: Vec::new(),
            path: None,
            trajectory: Vec::new(),
            phase1_trace: Vec::new(),
            trace: Vec::new(),
            reanchor_events: Vec::new(),
            wall_clock_seconds: 0.0,
        }
    }

    /// Report for a run that failed before producing a counterfactual.
    pub fn diverged(method: &str, config: serde_json::Value, learning_rate: f64, problem: &CounterfactualProblem, err: &Error) -> Self {
        let mut r = Self::new(method, config, learning_rate, problem);
        r.status = RunStatus::Diverged;
        r.error = Some(err.to_string());
        r
    }

    pub fn final_latent_vector(&self) -> Vector {
        Vector::from_column_slice(&self.final_latent)
    }

    pub fn final_ambient_vector(&self) -> Vector {
        Vector::from_column_slice(&self.final_ambient)
    }

    pub(crate) fn finish(&mut self, generator: &MapRef, z: &Vector) -> Result<()> {
        self.final_latent = z.iter().copied().collect();
        self.final_ambient = generator.value(z)?.iter().copied().collect();
        Ok(())
    }
}

/// One counterfactual query: input latent, target exemplar, classifier head
/// (carrying `y'`) and the geometry the path-based method optimizes in.
#[derive(Debug, Clone)]
pub struct CounterfactualProblem {
    pub z0: Vector,
    pub exemplar: Vector,
    pub head: ClassifierHead,
    pub pack: MetricPack,
}

impl CounterfactualProblem {
    pub fn new(z0: Vector, exemplar: Vector, head: ClassifierHead, pack: MetricPack) -> Result<Self> {
        check_len(pack.latent_dim(), z0.len())?;
        check_len(pack.latent_dim(), exemplar.len())?;
        check_len(head.logits().in_dim(), pack.generator().out_dim())?;
        Ok(Self { z0, exemplar, head, pack })
    }

    pub fn generator(&self) -> &MapRef {
        self.pack.generator()
    }
}

/// A counterfactual search strategy.
pub trait CounterfactualMethod: Send + Sync {
    fn name(&self) -> &'static str;

    /// Step sizes swept on held-out instances; empty when the method runs at
    /// its fixed default.
    fn learning_rate_candidates(&self) -> Vec<f64>;

    fn default_learning_rate(&self) -> f64;

    fn config_echo(&self) -> serde_json::Value;

    fn run(&self, problem: &CounterfactualProblem, learning_rate: f64) -> Result<RunReport>;
}

/// Shared settings used to instantiate the built-in methods.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodSettings {
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
    pub baseline: BaselineConfig,
    /// Number of path segments `T`.
    pub segments: Segments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Segments(pub usize);

impl Default for Segments {
    fn default() -> Self {
        Segments(10)
    }
}

#[derive(Clone, Default)]
pub struct MethodRegistry {
    methods: BTreeMap<&'static str, Arc<dyn CounterfactualMethod>>,
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `pcg`, `revise`, `vsgd`, `rsgd` and `rsgd_c`.
    pub fn with_builtins(settings: &MethodSettings) -> Self {
        let mut r = Self::new();
        r.register(Arc::new(PcgMethod::new(settings.phase1.clone(), settings.phase2.clone(), settings.segments.0)));
        r.register(Arc::new(ReviseMethod::new(settings.baseline.clone())));
        r.register(Arc::new(VsgdMethod::new(settings.baseline.clone())));
        r.register(Arc::new(RsgdMethod::new(settings.baseline.clone(), RsgdVariant::PixelPullback)));
        r.register(Arc::new(RsgdMethod::new(settings.baseline.clone(), RsgdVariant::ClassifierFeaturePullback)));
        r
    }

    pub fn register(&mut self, method: Arc<dyn CounterfactualMethod>) {
        self.methods.insert(method.name(), method);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn CounterfactualMethod>> {
        self.methods.get(name).cloned().ok_or_else(|| Error::Unknown {
            kind: "method",
            name: name.to_string(),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.keys().copied().collect()
    }
}
