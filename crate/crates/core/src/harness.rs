//! Batch experiments over (seed, method) cells.
//!
//! A run writes, under the configured output directory:
//!
//! * `config.json`: the resolved configuration,
//! * `reports/<method>/seed_<seed>.json`: one [`RunReport`] per cell,
//! * `selection.json`: the learning rate chosen per method and the sweep
//!   that chose it,
//! * `metrics.csv`: long format with columns [`METRICS_CSV_COLUMNS`],
//! * `summary.json`: mean and sample standard deviation per method and
//!   metric,
//! * optionally `ablation.csv` and `sensitivity.csv`.
//!
//! Cells run in parallel and are merged in (seed, method) order, so every
//! file except the wall-clock field of the reports is reproducible.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{
    BaselineConfig, CounterfactualMethod, CounterfactualProblem, MethodRegistry, MethodSettings, Phase2Config, RunReport, RunStatus, Segments,
};
use crate::diffmap::{compose, MapRef};
use crate::error::{Error, Result};
use crate::evaluation::{
    induced_distance, l1_distance, l2_distance, mas, path_step_smoothness, semantic_margin, sensitivity_stats, target_pair_baseline,
    EmbeddedSet, EvalEmbedder,
};
use crate::geometry::{EndpointPolicy, LatentPath};
use crate::paths::{init_linear, Phase1Config};
use crate::synth::{build_scenario, sample_instance_for, usable_indices, Scenario, ScenarioSpec};
use crate::Vector;

/// Header of `metrics.csv`.
pub const METRICS_CSV_COLUMNS: [&str; 5] = ["seed", "method", "status", "metric", "value"];

/// Metric names in emission order. Rows for a deselected embedder are
/// omitted.
pub const METRIC_NAMES: [&str; 14] = [
    "L1",
    "L2",
    "L_F",
    "L_R",
    "MAS_pixel",
    "MAS_standard",
    "MAS_robust",
    "SM",
    "COUT",
    "smoothness_standard",
    "smoothness_robust",
    "smoothness_linear_standard",
    "smoothness_linear_robust",
    "retention",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSelection {
    pub standard: bool,
    pub robust: bool,
}

impl Default for EmbedderSelection {
    fn default() -> Self {
        Self { standard: true, robust: true }
    }
}

impl EmbedderSelection {
    fn keeps(&self, metric: &str) -> bool {
        let standard = matches!(metric, "L_F" | "MAS_standard" | "smoothness_standard" | "smoothness_linear_standard");
        let robust = matches!(metric, "L_R" | "MAS_robust" | "SM" | "smoothness_robust" | "smoothness_linear_robust");
        (!standard || self.standard) && (!robust || self.robust)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSchedule {
    pub lambda0: f64,
    pub lambda_factor: f64,
    #[serde(default = "default_lambda_period")]
    pub lambda_period: usize,
}

fn default_lambda_period() -> usize {
    50
}

/// Phase-2 λ-schedule ablation for the path-based method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub schedules: Vec<LambdaSchedule>,
    /// Instance seeds; the experiment seeds when absent.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

/// Dispersion of counterfactuals over several target exemplars for a fixed
/// input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub seeds: Vec<u64>,
    /// Exemplars per input.
    pub inits: usize,
    /// Random target-class pairs in the dispersion baseline.
    pub baseline_pairs: usize,
    pub methods: Vec<String>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            inits: 8,
            baseline_pairs: 30,
            methods: vec!["pcg".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
    #[serde(default)]
    pub phase1: Phase1Config,
    #[serde(default)]
    pub phase2: Phase2Config,
    #[serde(default)]
    pub baseline: BaselineConfig,
    /// Path segments `T`.
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default)]
    pub embedders: EmbedderSelection,
    /// Target class; the scenario default when absent.
    #[serde(default)]
    pub target: Option<usize>,
    #[serde(default = "default_semantic_k")]
    pub semantic_k: usize,
    #[serde(default = "default_cout_eps")]
    pub cout_eps: f64,
    /// Held-out instance seeds for the learning-rate sweep; empty disables it.
    #[serde(default = "default_sweep_seeds")]
    pub sweep_seeds: Vec<u64>,
    /// Fixed learning rates that bypass the sweep.
    #[serde(default)]
    pub learning_rates: BTreeMap<String, f64>,
    #[serde(default)]
    pub ablation: Option<AblationConfig>,
    #[serde(default)]
    pub sensitivity: Option<SensitivityConfig>,
    pub output_dir: PathBuf,
    /// Worker threads; rayon's default when absent.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_segments() -> usize {
    10
}

fn default_semantic_k() -> usize {
    16
}

fn default_cout_eps() -> f64 {
    1e-8
}

fn default_sweep_seeds() -> Vec<u64> {
    (1_000_000..1_000_005).collect()
}

impl ExperimentConfig {
    /// Minimal configuration with defaults for everything optional.
    pub fn new(scenario: ScenarioSpec, seeds: Vec<u64>, methods: Vec<String>, output_dir: PathBuf) -> Self {
        Self {
            scenario,
            seeds,
            methods,
            phase1: Phase1Config::default(),
            phase2: Phase2Config::default(),
            baseline: BaselineConfig::default(),
            segments: default_segments(),
            embedders: EmbedderSelection::default(),
            target: None,
            semantic_k: default_semantic_k(),
            cout_eps: default_cout_eps(),
            sweep_seeds: default_sweep_seeds(),
            learning_rates: BTreeMap::new(),
            ablation: None,
            sensitivity: None,
            output_dir,
            threads: None,
        }
    }

    /// Parse and validate a JSON document; errors carry line and column.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn settings(&self) -> MethodSettings {
        MethodSettings {
            phase1: self.phase1.clone(),
            phase2: self.phase2.clone(),
            baseline: self.baseline.clone(),
            segments: Segments(self.segments),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods: at least one method is required".into()));
        }
        let registry = MethodRegistry::with_builtins(&self.settings());
        let mut seen = HashSet::new();
        for m in &self.methods {
            registry.get(m).map_err(|e| Error::Config(format!("methods: {e}")))?;
            if !seen.insert(m) {
                return Err(Error::Config(format!("methods: '{m}' listed twice")));
            }
        }
        let mut seen = HashSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return Err(Error::Config(format!("seeds: {s} listed twice")));
            }
        }
        for (m, lr) in &self.learning_rates {
            registry.get(m).map_err(|e| Error::Config(format!("learning_rates: {e}")))?;
            if !(*lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning_rates.{m}: must be positive and finite")));
            }
        }
        if self.segments < 1 {
            return Err(Error::Config("segments: T must be >= 1".into()));
        }
        if self.semantic_k < 1 {
            return Err(Error::Config("semantic_k: must be >= 1".into()));
        }
        if !(self.cout_eps >= 0.0 && self.cout_eps.is_finite()) {
            return Err(Error::Config("cout_eps: must be finite and >= 0".into()));
        }
        self.phase1.validate().map_err(|e| Error::Config(format!("phase1: {e}")))?;
        self.phase2.validate().map_err(|e| Error::Config(format!("phase2: {e}")))?;
        self.baseline.validate().map_err(|e| Error::Config(format!("baseline: {e}")))?;
        if let Some(a) = &self.ablation {
            if a.schedules.is_empty() {
                return Err(Error::Config("ablation.schedules: at least one schedule is required".into()));
            }
            for (i, s) in a.schedules.iter().enumerate() {
                self.ablated(s).validate().map_err(|e| Error::Config(format!("ablation.schedules[{i}]: {e}")))?;
            }
        }
        if let Some(s) = &self.sensitivity {
            if s.inits < 2 || s.seeds.is_empty() || s.baseline_pairs == 0 {
                return Err(Error::Config("sensitivity: needs seeds, inits >= 2 and baseline_pairs >= 1".into()));
            }
            for m in &s.methods {
                registry.get(m).map_err(|e| Error::Config(format!("sensitivity.methods: {e}")))?;
            }
        }
        if let Some(0) = self.threads {
            return Err(Error::Config("threads: must be >= 1".into()));
        }
        let overlap: Vec<_> = self.sweep_seeds.iter().filter(|s| self.seeds.contains(s)).collect();
        if !overlap.is_empty() {
            log::warn!("sweep seeds {overlap:?} are also evaluation seeds");
        }
        Ok(())
    }

    fn ablated(&self, s: &LambdaSchedule) -> Phase2Config {
        Phase2Config {
            lambda0: s.lambda0,
            lambda_factor: s.lambda_factor,
            lambda_period: s.lambda_period,
            ..self.phase2.clone()
        }
    }
}

/// Scenario plus the derived state shared by all cells.
pub struct EvalContext {
    pub scenario: Scenario,
    pub target: usize,
    pub robust_set: EmbeddedSet,
    pub segments: usize,
    pub semantic_k: usize,
    pub cout_eps: f64,
    pub embedders: EmbedderSelection,
    standard_features: MapRef,
    robust_features: MapRef,
}

impl EvalContext {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let scenario = build_scenario(&cfg.scenario)?;
        let target = cfg.target.unwrap_or(scenario.default_target);
        if target >= scenario.classes() {
            return Err(Error::Config(format!("target: class {target} out of range")));
        }
        let pack = scenario.metric_pack();
        scenario.standard_eval.ensure_distinct_from(&pack)?;
        scenario.robust_eval.ensure_distinct_from(&pack)?;
        let robust_set = scenario.data.embed(&scenario.robust_eval)?;
        let standard_features = compose(scenario.standard_eval.map.clone(), scenario.generator.clone())?;
        let robust_features = compose(scenario.robust_eval.map.clone(), scenario.generator.clone())?;
        Ok(Self {
            scenario,
            target,
            robust_set,
            segments: cfg.segments,
            semantic_k: cfg.semantic_k,
            cout_eps: cfg.cout_eps,
            embedders: cfg.embedders,
            standard_features,
            robust_features,
        })
    }

    /// Counterfactual query for an instance seed.
    pub fn problem(&self, seed: u64) -> Result<CounterfactualProblem> {
        let inst = sample_instance_for(&self.scenario, self.target, seed)?;
        CounterfactualProblem::new(inst.z0, inst.exemplar, self.scenario.classifier.retarget(self.target)?, self.scenario.metric_pack())
    }

    fn embedder(&self, robust: bool) -> &EvalEmbedder {
        if robust {
            &self.scenario.robust_eval
        } else {
            &self.scenario.standard_eval
        }
    }

    /// Path scored by the smoothness metrics: the final path of path-based
    /// methods, otherwise `T + 1` evenly spaced optimizer iterates.
    pub fn scored_path(&self, report: &RunReport) -> Result<Option<LatentPath>> {
        if let Some(p) = &report.path {
            return Ok(Some(p.clone()));
        }
        let n = report.trajectory.len();
        if n < 2 {
            return Ok(None);
        }
        let t = self.segments;
        let rows: Vec<Vec<f64>> = (0..=t).map(|i| report.trajectory[(i * (n - 1) + t / 2) / t].clone()).collect();
        Ok(Some(LatentPath::from_rows(&rows, EndpointPolicy::BothFixed)?))
    }

    /// All metrics for one report; `None` for diverged runs and for
    /// metrics that are undefined at this point.
    pub fn metrics(&self, report: &RunReport) -> Vec<(&'static str, Option<f64>)> {
        let names = METRIC_NAMES.iter().copied().filter(|m| self.embedders.keeps(m));
        if report.status != RunStatus::Ok || report.final_latent.is_empty() {
            return names.map(|m| (m, None)).collect();
        }
        names
            .map(|m| {
                let v = self.metric(m, report).unwrap_or_else(|e| {
                    log::debug!("{m} undefined for {} seed {:?}: {e}", report.method, report.seed);
                    None
                });
                (m, v)
            })
            .collect()
    }

    fn metric(&self, name: &str, report: &RunReport) -> Result<Option<f64>> {
        let sc = &self.scenario;
        let z0 = Vector::from_column_slice(&report.initial_latent);
        let zc = report.final_latent_vector();
        let x0 = sc.generator.value(&z0)?;
        let xc = report.final_ambient_vector();
        let head = sc.classifier.retarget(report.target_class)?;
        let smooth = |robust: bool, linear: bool| -> Result<Option<f64>> {
            let path = if linear {
                Some(init_linear(&z0, &zc, self.segments)?)
            } else {
                self.scored_path(report)?
            };
            path.map(|p| path_step_smoothness(&p, &sc.generator, self.embedder(robust))).transpose()
        };
        Ok(match name {
            "L1" => Some(l1_distance(&x0, &xc)?),
            "L2" => Some(l2_distance(&x0, &xc)?),
            "L_F" => Some(induced_distance(&x0, &xc, &sc.standard_metric().metric_at(&x0)?)?),
            "L_R" => Some(induced_distance(&x0, &xc, &sc.robust_metric().metric_at(&x0)?)?),
            "MAS_pixel" => Some(mas(&z0, &zc, &sc.generator)?),
            "MAS_standard" => Some(mas(&z0, &zc, &self.standard_features)?),
            "MAS_robust" => Some(mas(&z0, &zc, &self.robust_features)?),
            "SM" => Some(semantic_margin(&xc, &self.robust_set, &sc.robust_eval, report.target_class, self.semantic_k)?),
            "COUT" => Some(crate::evaluation::cout(&head, &x0, &xc, self.cout_eps)?),
            "smoothness_standard" => smooth(false, false)?,
            "smoothness_robust" => smooth(true, false)?,
            "smoothness_linear_standard" => smooth(false, true)?,
            "smoothness_linear_robust" => smooth(true, true)?,
            "retention" => Some(if head.is_target(&xc)? { 1.0 } else { 0.0 }),
            other => return Err(Error::Unknown { kind: "metric", name: other.into() }),
        })
    }
}

/// Run one cell, converting failures into a diverged report.
pub fn run_cell(ctx: &EvalContext, method: &dyn CounterfactualMethod, seed: u64, learning_rate: f64) -> Result<RunReport> {
    let problem = ctx.problem(seed)?;
    let mut report = match method.run(&problem, learning_rate) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("{} seed {seed} failed: {e}", method.name());
            RunReport::diverged(method.name(), method.config_echo(), learning_rate, &problem, &e)
        }
    };
    report.seed = Some(seed);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub learning_rate: f64,
    pub flip_rate: f64,
    pub mean_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRateChoice {
    pub learning_rate: f64,
    /// `fixed`, `sweep` or `default`.
    pub source: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepPoint>,
}

/// Highest flip rate on the held-out seeds, ties broken by lower mean L2,
/// then by lower learning rate.
pub fn select_learning_rate(ctx: &EvalContext, method: &dyn CounterfactualMethod, seeds: &[u64]) -> Result<LearningRateChoice> {
    let candidates = method.learning_rate_candidates();
    if candidates.is_empty() || seeds.is_empty() {
        return Ok(LearningRateChoice {
            learning_rate: method.default_learning_rate(),
            source: "default".into(),
            sweep: Vec::new(),
        });
    }
    let jobs: Vec<(f64, u64)> = candidates.iter().flat_map(|&lr| seeds.iter().map(move |&s| (lr, s))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(lr, s)| {
            let r = run_cell(ctx, method, s, lr)?;
            if r.status != RunStatus::Ok {
                return Ok((false, None));
            }
            let head = ctx.scenario.classifier.retarget(r.target_class)?;
            let x0 = ctx.scenario.generator.value(&Vector::from_column_slice(&r.initial_latent))?;
            Ok((head.is_target(&r.final_ambient_vector())?, Some(l2_distance(&x0, &r.final_ambient_vector())?)))
        })
        .collect::<Result<Vec<_>>>()?;
    let sweep: Vec<SweepPoint> = candidates
        .iter()
        .enumerate()
        .map(|(i, &lr)| {
            let chunk = &outcomes[i * seeds.len()..(i + 1) * seeds.len()];
            let flips = chunk.iter().filter(|(f, _)| *f).count();
            let l2: Vec<f64> = chunk.iter().filter_map(|(_, d)| *d).collect();
            SweepPoint {
                learning_rate: lr,
                flip_rate: flips as f64 / seeds.len() as f64,
                mean_l2: (!l2.is_empty()).then(|| l2.iter().sum::<f64>() / l2.len() as f64),
            }
        })
        .collect();
    let best = sweep
        .iter()
        .min_by(|a, b| {
            b.flip_rate
                .total_cmp(&a.flip_rate)
                .then(a.mean_l2.unwrap_or(f64::INFINITY).total_cmp(&b.mean_l2.unwrap_or(f64::INFINITY)))
                .then(a.learning_rate.total_cmp(&b.learning_rate))
        })
        .expect("non-empty sweep");
    Ok(LearningRateChoice {
        learning_rate: best.learning_rate,
        source: "sweep".into(),
        sweep,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub method: String,
    pub status: RunStatus,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub learning_rate: Option<f64>,
    pub runs: usize,
    pub ok: usize,
    pub diverged: usize,
    /// Fraction of all runs, diverged ones included, ending in the target class.
    pub retention_rate: f64,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: ScenarioSpec,
    pub seeds: Vec<u64>,
    pub methods: BTreeMap<String, MethodSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ablation: BTreeMap<String, MethodSummary>,
}

/// Per-method aggregates of long-format rows.
pub fn summarize_rows(rows: &[MetricRow]) -> BTreeMap<String, MethodSummary> {
    let mut by_method: BTreeMap<String, BTreeMap<u64, (RunStatus, Vec<&MetricRow>)>> = BTreeMap::new();
    for r in rows {
        by_method
            .entry(r.method.clone())
            .or_default()
            .entry(r.seed)
            .or_insert_with(|| (r.status, Vec::new()))
            .1
            .push(r);
    }
    by_method
        .into_iter()
        .map(|(method, cells)| {
            let runs = cells.len();
            let ok = cells.values().filter(|(s, _)| *s == RunStatus::Ok).count();
            let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut retained = 0usize;
            for (_, cell) in cells.values() {
                for r in cell {
                    if let Some(v) = r.value {
                        values.entry(r.metric.clone()).or_default().push(v);
                        if r.metric == "retention" && v == 1.0 {
                            retained += 1;
                        }
                    }
                }
            }
            let metrics = values.into_iter().filter_map(|(k, v)| MetricSummary::of(&v).map(|s| (k, s))).collect();
            (
                method,
                MethodSummary {
                    learning_rate: None,
                    runs,
                    ok,
                    diverged: runs - ok,
                    retention_rate: retained as f64 / runs as f64,
                    metrics,
                },
            )
        })
        .collect()
}

/// Long-format rows for a batch of reports, in report order.
pub fn metric_rows(ctx: &EvalContext, reports: &[RunReport]) -> Vec<MetricRow> {
    reports
        .par_iter()
        .map(|r| {
            ctx.metrics(r)
                .into_iter()
                .map(|(m, v)| MetricRow {
                    seed: r.seed.unwrap_or_default(),
                    method: r.method.clone(),
                    status: r.status,
                    metric: m.to_string(),
                    value: v,
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_CSV_COLUMNS {
        return Err(Error::Config(format!("unexpected metrics.csv columns {header:?}")));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<MetricRow>, _>>()?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn report_path(dir: &Path, method: &str, seed: u64) -> PathBuf {
    dir.join("reports").join(method).join(format!("seed_{seed}.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub schedule: usize,
    pub lambda0: f64,
    pub lambda_factor: f64,
    pub lambda_period: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub retained: Option<bool>,
    pub l_r: Option<f64>,
    pub smoothness_robust: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub seed: u64,
    pub method: String,
    pub cdr: Option<f64>,
    pub iocr: Option<f64>,
    pub diameter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub cells: usize,
    pub diverged: usize,
    pub summary: Summary,
}

impl ExperimentOutcome {
    pub fn fully_succeeded(&self) -> bool {
        self.diverged == 0
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("threads: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}

/// Run every (seed, method) cell and write the result bundle.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    with_pool(cfg.threads, || run_experiment_inner(cfg))?
}

fn run_experiment_inner(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let ctx = EvalContext::new(cfg)?;
    let registry = MethodRegistry::with_builtins(&cfg.settings());
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir.join("reports"))?;
    write_json(&dir.join("config.json"), cfg)?;

    let mut selection = BTreeMap::new();
    for name in &cfg.methods {
        let method = registry.get(name)?;
        let choice = match cfg.learning_rates.get(name) {
            Some(&lr) => LearningRateChoice {
                learning_rate: lr,
                source: "fixed".into(),
                sweep: Vec::new(),
            },
            None => select_learning_rate(&ctx, method.as_ref(), &cfg.sweep_seeds)?,
        };
        log::info!("{name}: learning rate {} ({})", choice.learning_rate, choice.source);
        selection.insert(name.clone(), choice);
    }
    write_json(&dir.join("selection.json"), &selection)?;

    let cells: Vec<(u64, &String)> = cfg.seeds.iter().flat_map(|&s| cfg.methods.iter().map(move |m| (s, m))).collect();
    let reports = cells
        .par_iter()
        .map(|&(seed, name)| {
            let method = registry.get(name)?;
            let report = run_cell(&ctx, method.as_ref(), seed, selection[name].learning_rate)?;
            let path = report_path(dir, name, seed);
            fs::create_dir_all(path.parent().expect("report path has a parent"))?;
            write_json(&path, &report)?;
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut outcome = write_tables(cfg, &ctx, &reports, &selection)?;
    if let Some(a) = &cfg.ablation {
        outcome.summary.ablation = run_ablation(cfg, &ctx, a)?;
        write_json(&dir.join("summary.json"), &outcome.summary)?;
    }
    if let Some(s) = &cfg.sensitivity {
        let rows = run_sensitivity(&ctx, &registry, &selection, s)?;
        let mut w = csv::Writer::from_path(dir.join("sensitivity.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(outcome)
}

fn write_tables(cfg: &ExperimentConfig, ctx: &EvalContext, reports: &[RunReport], selection: &BTreeMap<String, LearningRateChoice>) -> Result<ExperimentOutcome> {
    let dir = &cfg.output_dir;
    let rows = metric_rows(ctx, reports);
    write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    let mut methods = summarize_rows(&rows);
    for (name, s) in methods.iter_mut() {
        s.learning_rate = selection.get(name).map(|c| c.learning_rate);
    }
    let summary = Summary {
        scenario: cfg.scenario.clone(),
        seeds: cfg.seeds.clone(),
        methods,
        ablation: BTreeMap::new(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(ExperimentOutcome {
        output_dir: dir.clone(),
        cells: reports.len(),
        diverged: reports.iter().filter(|r| r.status != RunStatus::Ok).count(),
        summary,
    })
}

fn run_ablation(cfg: &ExperimentConfig, ctx: &EvalContext, a: &AblationConfig) -> Result<BTreeMap<String, MethodSummary>> {
    let seeds = a.seeds.clone().unwrap_or_else(|| cfg.seeds.clone());
    let jobs: Vec<(usize, u64)> = (0..a.schedules.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let s = &a.schedules[i];
            let method = crate::counterfactual::PcgMethod::new(cfg.phase1.clone(), cfg.ablated(s), cfg.segments);
            let report = run_cell(ctx, &method, seed, cfg.phase2.learning_rate)?;
            let metrics: BTreeMap<_, _> = ctx.metrics(&report).into_iter().collect();
            Ok(AblationRow {
                schedule: i,
                lambda0: s.lambda0,
                lambda_factor: s.lambda_factor,
                lambda_period: s.lambda_period,
                seed,
                status: report.status,
                retained: metrics.get("retention").copied().flatten().map(|v| v == 1.0),
                l_r: metrics.get("L_R").copied().flatten(),
                smoothness_robust: metrics.get("smoothness_robust").copied().flatten(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("ablation.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let long: Vec<MetricRow> = rows
        .iter()
        .flat_map(|r| {
            let key = format!("schedule_{}", r.schedule);
            [
                ("retention", r.retained.map(|b| if b { 1.0 } else { 0.0 })),
                ("L_R", r.l_r),
                ("smoothness_robust", r.smoothness_robust),
            ]
            .into_iter()
            .map(move |(m, v)| MetricRow {
                seed: r.seed,
                method: key.clone(),
                status: r.status,
                metric: m.into(),
                value: v,
            })
        })
        .collect();
    Ok(summarize_rows(&long))
}

fn run_sensitivity(
    ctx: &EvalContext,
    registry: &MethodRegistry,
    selection: &BTreeMap<String, LearningRateChoice>,
    s: &SensitivityConfig,
) -> Result<Vec<SensitivityRow>> {
    let sc = &ctx.scenario;
    let (_, exemplars) = usable_indices(sc, ctx.target)?;
    if exemplars.len() < s.inits {
        return Err(Error::InsufficientData(format!("sensitivity needs {} exemplars, scenario has {}", s.inits, exemplars.len())));
    }
    let jobs: Vec<(u64, &String)> = s.seeds.iter().flat_map(|&seed| s.methods.iter().map(move |m| (seed, m))).collect();
    jobs.par_iter()
        .map(|&(seed, name)| {
            let method = registry.get(name)?;
            let lr = selection.get(name).map_or_else(|| method.default_learning_rate(), |c| c.learning_rate);
            let base = ctx.problem(seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picks = sample(&mut rng, exemplars.len(), s.inits);
            let mut cfs = Vec::new();
            let mut inits = Vec::new();
            for p in picks.iter() {
                let mut problem = base.clone();
                problem.exemplar = sc.data.latents[exemplars[p]].clone();
                match method.run(&problem, lr) {
                    Ok(r) if r.status == RunStatus::Ok => {
                        cfs.push(r.final_ambient_vector());
                        inits.push(sc.generator.value(&problem.exemplar)?);
                    }
                    Ok(_) => {}
                    Err(e) => log::warn!("sensitivity run {name} seed {seed} failed: {e}"),
                }
            }
            let baseline = target_pair_baseline(&sc.data, ctx.target, &sc.robust_eval, s.baseline_pairs, seed)?;
            let stats = sensitivity_stats(&cfs, &inits, baseline, &sc.robust_eval).ok();
            Ok(SensitivityRow {
                seed,
                method: name.clone(),
                cdr: stats.map(|x| x.cdr),
                iocr: stats.map(|x| x.iocr),
                diameter: stats.map(|x| x.diameter),
            })
        })
        .collect()
}

/// Recompute `metrics.csv` and `summary.json` from the stored configuration
/// and raw reports of a finished run.
pub fn rebuild_report(dir: &Path) -> Result<ExperimentOutcome> {
    let mut cfg = ExperimentConfig::from_file(&dir.join("config.json"))?;
    cfg.output_dir = dir.to_path_buf();
    let ctx = EvalContext::new(&cfg)?;
    let selection: BTreeMap<String, LearningRateChoice> = match fs::read_to_string(dir.join("selection.json")) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => BTreeMap::new(),
    };
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        for m in &cfg.methods {
            let path = report_path(dir, m, seed);
            let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("missing report {}: {e}", path.display())))?;
            reports.push(serde_json::from_str::<RunReport>(&text)?);
        }
    }
    let previous: Option<Summary> = fs::read_to_string(dir.join("summary.json")).ok().and_then(|t| serde_json::from_str(&t).ok());
    let mut outcome = write_tables(&cfg, &ctx, &reports, &selection)?;
    if let Some(prev) = previous.filter(|p| !p.ablation.is_empty()) {
        outcome.summary.ablation = prev.ablation;
        write_json(&dir.join("summary.json"), &outcome.summary)?;
    }
    Ok(outcome)
}
