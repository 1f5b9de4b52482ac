//! Reproducible synthetic scenarios: generator, classifier, optimization
//! feature maps, evaluation embedders and a labeled latent dataset.
//!
//! * `sphere`: the unit-sphere immersion in spherical coordinates with two
//!   geodesic caps straddling the equator; no randomness is consumed.
//! * `mlp2`: a 2-D latent decoded into a 16-sample signal by a softplus
//!   MLP whose first latent axis drives low-frequency content at small
//!   amplitude and whose second axis drives high-frequency content at large
//!   amplitude. The robust features only see the low-frequency band, so
//!   pixel distance and robust distance disagree about which latent
//!   direction is cheap.
//! * `anisotropic`: a diagonally scaled linear embedding of a 2-D latent.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counterfactual::ClassifierHead;
use crate::diffmap::{compose, Activation, Identity, LayerWeights, LinearMap, MapRef, MapSpec, MlpMap, SphereImmersion};
use crate::error::{Error, Result};
use crate::evaluation::{EmbedderRole, EvalEmbedder, LabeledLatentSet};
use crate::geometry::{AmbientMetric, MetricPack};
use crate::{Matrix, Vector};

pub const SCENARIO_NAMES: [&str; 3] = ["sphere", "mlp2", "anisotropic"];

/// Sample count of the `mlp2` signal.
pub const MLP2_SIGNAL_LEN: usize = 16;
/// Frequency multiplier of the brittle evaluation embedder.
pub const BRITTLE_OMEGA: f64 = 25.0;
/// Required classifier accuracy on the scenario's own dataset.
pub const MIN_ACCURACY: f64 = 0.95;
/// Seed for the maps of the seed-independent `sphere` scenario.
const SPHERE_INTERNAL_SEED: u64 = 0x5eed_5a11;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(name: &str, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub generator: MapRef,
    /// Classifier head aimed at [`Scenario::default_target`].
    pub classifier: ClassifierHead,
    pub ambient: AmbientMetric,
    pub standard_eval: EvalEmbedder,
    pub robust_eval: EvalEmbedder,
    pub data: LabeledLatentSet,
    pub default_target: usize,
}

impl Scenario {
    /// Generator plus the robust optimization metric.
    pub fn metric_pack(&self) -> MetricPack {
        MetricPack::new(self.generator.clone(), self.ambient.clone()).expect("scenario maps agree on dimensions")
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.in_dim()
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    pub fn accuracy(&self) -> Result<f64> {
        classifier_accuracy(&self.classifier, &self.data)
    }

    /// Geometry of the `L_F` distance: Gram of the standard embedder.
    pub fn standard_metric(&self) -> AmbientMetric {
        AmbientMetric::composite_default(vec![self.standard_eval.map.clone()]).expect("embedder has positive output dim")
    }

    /// Geometry of the `L_R` distance: Gram of the robust embedder.
    pub fn robust_metric(&self) -> AmbientMetric {
        AmbientMetric::composite_default(vec![self.robust_eval.map.clone()]).expect("embedder has positive output dim")
    }

    /// Latent bounding box `(min, max)` of the dataset.
    pub fn data_bounds(&self) -> (Vector, Vector) {
        let d = self.latent_dim();
        let mut lo = Vector::from_element(d, f64::INFINITY);
        let mut hi = Vector::from_element(d, f64::NEG_INFINITY);
        for z in &self.data.latents {
            lo = lo.zip_map(z, f64::min);
            hi = hi.zip_map(z, f64::max);
        }
        (lo, hi)
    }
}

pub fn classifier_accuracy(head: &ClassifierHead, data: &LabeledLatentSet) -> Result<f64> {
    let mut correct = 0usize;
    for (z, &label) in data.latents.iter().zip(&data.labels) {
        if head.predict(&data.generator.value(z)?)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.labels.len().max(1) as f64)
}

pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    let sc = match spec.name.as_str() {
        "sphere" => sphere()?,
        "mlp2" => mlp2(spec.seed, &Mlp2Params::default())?,
        "anisotropic" => anisotropic(spec.seed)?,
        other => {
            return Err(Error::Unknown {
                kind: "scenario",
                name: other.to_string(),
            })
        }
    };
    validate(&sc)?;
    Ok(sc)
}

fn validate(sc: &Scenario) -> Result<()> {
    let acc = sc.accuracy()?;
    if acc < MIN_ACCURACY {
        return Err(Error::Scenario(format!("classifier accuracy {acc:.3} below {MIN_ACCURACY}")));
    }
    for z in &sc.data.latents {
        let j = sc.generator.jacobian(z)?;
        let sigma_min = j.singular_values().min();
        if !(sigma_min > 1e-6) {
            return Err(Error::Scenario(format!("generator Jacobian rank-deficient (sigma_min {sigma_min:e})")));
        }
    }
    Ok(())
}

/// One counterfactual query drawn from a scenario's dataset.
#[derive(Debug, Clone)]
pub struct Instance {
    pub z0: Vector,
    pub target: usize,
    pub exemplar: Vector,
    pub source_index: usize,
    pub exemplar_index: usize,
}

/// `z0` uniform over dataset points of other classes that the classifier
/// does not assign to the target; the exemplar uniform over target-labeled
/// points the classifier assigns to the target.
pub fn sample_instance(sc: &Scenario, seed: u64) -> Result<Instance> {
    sample_instance_for(sc, sc.default_target, seed)
}

/// Dataset indices usable as inputs (non-target, not classified as target)
/// and as exemplars (target-labeled and classified as target).
pub fn usable_indices(sc: &Scenario, target: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let head = sc.classifier.retarget(target)?;
    let mut sources = Vec::new();
    let mut exemplars = Vec::new();
    for (i, (z, &label)) in sc.data.latents.iter().zip(&sc.data.labels).enumerate() {
        let hit = head.is_target(&sc.generator.value(z)?)?;
        if label == target && hit {
            exemplars.push(i);
        } else if label != target && !hit {
            sources.push(i);
        }
    }
    if sources.is_empty() || exemplars.is_empty() {
        return Err(Error::InsufficientData(format!("no usable source or target-class points for class {target}")));
    }
    Ok((sources, exemplars))
}

pub fn sample_instance_for(sc: &Scenario, target: usize, seed: u64) -> Result<Instance> {
    let (sources, exemplars) = usable_indices(sc, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source_index = sources[rng.gen_range(0..sources.len())];
    let exemplar_index = exemplars[rng.gen_range(0..exemplars.len())];
    Ok(Instance {
        z0: sc.data.latents[source_index].clone(),
        target,
        exemplar: sc.data.latents[exemplar_index].clone(),
        source_index,
        exemplar_index,
    })
}

fn seeded_mlp(dims: &[usize], activation: Activation, seed: u64) -> Result<MapRef> {
    Ok(Arc::new(MlpMap::seeded(dims, activation, seed)?))
}

fn brittle_embedder(in_dim: usize, seed: u64) -> Result<EvalEmbedder> {
    let map = seeded_mlp(&[in_dim, 16, 8], Activation::Sine { omega: BRITTLE_OMEGA }, seed)?;
    Ok(EvalEmbedder::new(map, EmbedderRole::StandardEval))
}

fn sphere() -> Result<Scenario> {
    let generator: MapRef = Arc::new(SphereImmersion);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let centers = [(half_pi, -0.45), (half_pi, 0.45)];
    let radius = 0.2;

    let mut latents = Vec::new();
    let mut labels = Vec::new();
    let per_class = 64;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for (label, &(theta_c, phi_c)) in centers.iter().enumerate() {
        for i in 0..per_class {
            // sunflower lattice over the cap
            let r = radius * ((i as f64 + 0.5) / per_class as f64).sqrt();
            let a = i as f64 * golden;
            latents.push(Vector::from_vec(vec![theta_c + r * a.cos(), phi_c + r * a.sin()]));
            labels.push(label);
        }
    }

    let cap_direction = |&(theta, phi): &(f64, f64)| [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
    let c0 = cap_direction(&centers[0]);
    let c1 = cap_direction(&centers[1]);
    let gain = 20.0;
    let a = Matrix::from_row_slice(2, 3, &[c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]]) * gain;
    let penultimate: MapRef = Arc::new(Identity::new(3)?);
    let readout: MapRef = Arc::new(LinearMap::without_bias(a)?);
    let logits = compose(readout, penultimate.clone())?;
    let classifier = ClassifierHead::new(logits, 1)?.with_penultimate(penultimate)?;

    Ok(Scenario {
        spec: ScenarioSpec::new("sphere", 0),
        data: LabeledLatentSet::new(latents, labels, generator.clone())?,
        generator,
        classifier,
        ambient: AmbientMetric::Euclidean,
        standard_eval: brittle_embedder(3, SPHERE_INTERNAL_SEED)?,
        robust_eval: EvalEmbedder::new(Arc::new(Identity::new(3)?), EmbedderRole::RobustEval),
        default_target: 1,
    })
}

/// Orthonormal DCT-II basis vector `k` of length `n`.
pub fn dct_basis(n: usize, k: usize) -> Vector {
    let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    Vector::from_fn(n, |i, _| scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
}

/// `scale` times the projection onto DCT frequencies `0..bands`.
fn low_pass(n: usize, bands: usize, scale: f64) -> Result<MapRef> {
    let mut a = Matrix::zeros(bands, n);
    for k in 0..bands {
        a.set_row(k, &(dct_basis(n, k).transpose() * scale));
    }
    Ok(Arc::new(LinearMap::without_bias(a)?))
}

/// `s · f`.
fn scaled(f: MapRef, s: f64) -> Result<MapRef> {
    let n = f.out_dim();
    compose(Arc::new(LinearMap::without_bias(Matrix::identity(n, n) * s)?), f)
}

/// Construction constants of the `mlp2` scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mlp2Params {
    pub hidden_per_axis: usize,
    /// Amplitude of the low-frequency content driven by `z₁`.
    pub low_amplitude: f64,
    /// Amplitude of the high-frequency content driven by `z₂`.
    pub high_amplitude: f64,
    /// Low-frequency leak of the `z₂` block.
    pub leak: f64,
    /// Gain of the low-pass projection feeding the robust features.
    pub robust_gain: f64,
    /// Output scale of the robust features.
    pub robust_scale: f64,
    /// Number of DCT bands the robust features see.
    pub robust_bands: usize,
    pub cluster_std: f64,
    pub per_class: usize,
    /// Logit gap per unit of standardized readout score.
    pub logit_gain: f64,
}

impl Default for Mlp2Params {
    fn default() -> Self {
        Self {
            hidden_per_axis: 16,
            low_amplitude: 1.0,
            high_amplitude: 3.0,
            leak: 1.0,
            robust_gain: 20.0,
            robust_scale: 1.0,
            robust_bands: 5,
            cluster_std: 0.35,
            per_class: 100,
            logit_gain: 100.0,
        }
    }
}

/// Generator weights for `mlp2`: block-structured hidden layer, output
/// columns in fixed DCT bands.
fn mlp2_generator(rng: &mut ChaCha8Rng, p: &Mlp2Params) -> Result<MapRef> {
    let n = MLP2_SIGNAL_LEN;
    let h = p.hidden_per_axis;
    let mut w1 = Vec::with_capacity(2 * h * 2);
    let mut b1 = Vec::with_capacity(2 * h);
    for axis in 0..2 {
        for _ in 0..h {
            let main = rng.gen_range(0.8..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let cross = rng.gen_range(-0.3..0.3);
            if axis == 0 {
                w1.extend([main, cross]);
            } else {
                w1.extend([cross, main]);
            }
            b1.push(rng.gen_range(-1.0..1.0));
        }
    }
    let high_bands: Vec<usize> = (9..n).collect();
    let mut out = Matrix::zeros(n, 2 * h);
    for j in 0..h {
        let col = (dct_basis(n, 1) * rng.gen_range(-1.0..1.0) + dct_basis(n, 2) * rng.gen_range(-1.0..1.0))
            * (p.low_amplitude / (h as f64).sqrt());
        out.set_column(j, &col);
    }
    for j in 0..h {
        let mut col = Vector::zeros(n);
        for &k in &high_bands {
            col += dct_basis(n, k) * rng.gen_range(-1.0..1.0);
        }
        col *= p.high_amplitude / ((h * high_bands.len()) as f64).sqrt();
        col += dct_basis(n, 3) * (rng.gen_range(-1.0..1.0) * p.leak / (h as f64).sqrt());
        out.set_column(h + j, &col);
    }
    let weights = vec![
        LayerWeights { w: w1, b: b1 },
        LayerWeights {
            w: crate::diffmap::matrix_to_row_major(&out),
            b: vec![0.0; n],
        },
    ];
    Ok(Arc::new(MlpMap::from_weights(&[2, 2 * h, n], &weights, Activation::default(), None)?))
}

/// Binary logistic regression by full-batch gradient descent on
/// standardized features; returns `(w, b)` in the original feature units.
fn fit_logistic(features: &[Vector], labels: &[usize], iterations: usize) -> (Vector, f64) {
    let d = features[0].len();
    let n = features.len() as f64;
    let mut mean = Vector::zeros(d);
    for f in features {
        mean += f;
    }
    mean /= n;
    let mut std = Vector::zeros(d);
    for f in features {
        std += (f - &mean).map(|v| v * v);
    }
    let std = (std / n).map(|v| v.sqrt().max(1e-12));
    let xs: Vec<Vector> = features.iter().map(|f| (f - &mean).component_div(&std)).collect();

    let mut w = Vector::zeros(d);
    let mut b = 0.0;
    let lr = 0.5;
    for _ in 0..iterations {
        let mut gw = Vector::zeros(d);
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            let p = 1.0 / (1.0 + (-(w.dot(x) + b)).exp());
            let r = p - y as f64;
            gw += x * r;
            gb += r;
        }
        w -= gw * (lr / n);
        b -= gb * lr / n;
    }
    let w_raw = w.component_div(&std);
    let b_raw = b - w_raw.dot(&mean);
    (w_raw, b_raw)
}

/// Two-class linear readout on penultimate features, scaled so the logit gap
/// has standard deviation `gain` over the dataset.
fn fit_readout(penultimate: &MapRef, ambient_points: &[Vector], labels: &[usize], gain: f64) -> Result<MapRef> {
    let feats = ambient_points.iter().map(|x| penultimate.value(x)).collect::<Result<Vec<_>>>()?;
    let (w, b) = fit_logistic(&feats, labels, 1000);
    let scores: Vec<f64> = feats.iter().map(|f| w.dot(f) + b).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64).sqrt();
    let s = gain / sd.max(1e-12);
    let d = w.len();
    let mut a = Matrix::zeros(2, d);
    a.set_row(0, &(&w.transpose() * (-0.5 * s)));
    a.set_row(1, &(&w.transpose() * (0.5 * s)));
    Ok(Arc::new(LinearMap::new(a, Vector::from_vec(vec![-0.5 * s * b, 0.5 * s * b]))?))
}

fn gaussian_clusters(rng: &mut ChaCha8Rng, centers: &[[f64; 2]], std: f64, per_class: usize) -> (Vec<Vector>, Vec<usize>) {
    let mut latents = Vec::with_capacity(centers.len() * per_class);
    let mut labels = Vec::with_capacity(centers.len() * per_class);
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let z = Vector::from_fn(2, |i, _| c[i] + std * standard_normal(rng));
            latents.push(z);
            labels.push(label);
        }
    }
    (latents, labels)
}

/// Box–Muller draw from N(0, 1).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(stream)
}

pub fn mlp2(seed: u64, p: &Mlp2Params) -> Result<Scenario> {
    let n = MLP2_SIGNAL_LEN;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0));
    let generator = mlp2_generator(&mut rng, p)?;

    let lp = low_pass(n, p.robust_bands, p.robust_gain)?;
    let h1 = scaled(compose(seeded_mlp(&[p.robust_bands, 12, 8], Activation::default(), sub_seed(seed, 1))?, lp.clone())?, p.robust_scale)?;
    let h2 = scaled(compose(seeded_mlp(&[p.robust_bands, 8, 4], Activation::Tanh, sub_seed(seed, 2))?, lp)?, p.robust_scale)?;
    let ambient = AmbientMetric::composite_default(vec![h1, h2])?;

    let eval_lp = low_pass(n, p.robust_bands, p.robust_gain)?;
    let robust_eval = EvalEmbedder::new(
        scaled(compose(seeded_mlp(&[p.robust_bands, 10, 8], Activation::default(), sub_seed(seed, 3))?, eval_lp)?, p.robust_scale)?,
        EmbedderRole::RobustEval,
    );
    let standard_eval = brittle_embedder(n, sub_seed(seed, 4))?;

    let mut data_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 5));
    let (latents, labels) = gaussian_clusters(&mut data_rng, &[[-1.0, -1.0], [1.0, 1.0]], p.cluster_std, p.per_class);
    let data = LabeledLatentSet::new(latents, labels, generator.clone())?;

    let penultimate = seeded_mlp(&[n, 16, 8], Activation::default(), sub_seed(seed, 6))?;
    let readout = fit_readout(&penultimate, &data.ambient_points()?, &data.labels, p.logit_gain)?;
    let logits = compose(readout, penultimate.clone())?;
    let classifier = ClassifierHead::new(logits, 1)?.with_penultimate(penultimate)?;

    Ok(Scenario {
        spec: ScenarioSpec::new("mlp2", seed),
        generator,
        classifier,
        ambient,
        standard_eval,
        robust_eval,
        data,
        default_target: 1,
    })
}

fn anisotropic(seed: u64) -> Result<Scenario> {
    let a = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 10.0, 0.0, 0.0]);
    let generator: MapRef = Arc::new(LinearMap::without_bias(a)?);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 5));
    let (latents, labels) = gaussian_clusters(&mut rng, &[[-1.0, -0.1], [1.0, 0.1]], 0.25, 60);
    let data = LabeledLatentSet::new(latents, labels, generator.clone())?;
    let penultimate: MapRef = Arc::new(Identity::new(3)?);
    let readout = fit_readout(&penultimate, &data.ambient_points()?, &data.labels, 8.0)?;
    let logits = compose(readout, penultimate.clone())?;
    let classifier = ClassifierHead::new(logits, 1)?.with_penultimate(penultimate)?;
    let ambient = AmbientMetric::composite_default(vec![seeded_mlp(&[3, 8, 4], Activation::default(), sub_seed(seed, 1))?])?;
    Ok(Scenario {
        spec: ScenarioSpec::new("anisotropic", seed),
        generator,
        classifier,
        ambient,
        standard_eval: brittle_embedder(3, sub_seed(seed, 4))?,
        robust_eval: EvalEmbedder::new(Arc::new(Identity::new(3)?), EmbedderRole::RobustEval),
        data,
        default_target: 1,
    })
}

/// Materialized scenario as stored in `scenario.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub spec: ScenarioSpec,
    pub generator: MapSpec,
    pub logits: MapSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penultimate: Option<MapSpec>,
    pub features: Vec<WeightedMapSpec>,
    pub standard_eval: MapSpec,
    pub robust_eval: MapSpec,
    pub default_target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedMapSpec {
    pub map: MapSpec,
    pub weight: f64,
}

impl Scenario {
    pub fn to_document(&self) -> ScenarioDocument {
        ScenarioDocument {
            spec: self.spec.clone(),
            generator: self.generator.spec(),
            logits: self.classifier.logits().spec(),
            penultimate: self.classifier.penultimate().map(|m| m.spec()),
            features: self
                .ambient
                .features()
                .iter()
                .map(|f| WeightedMapSpec {
                    map: f.map.spec(),
                    weight: f.weight,
                })
                .collect(),
            standard_eval: self.standard_eval.map.spec(),
            robust_eval: self.robust_eval.map.spec(),
            default_target: self.default_target,
        }
    }

    /// Writes `scenario.json` and `dataset.csv` (columns `label,z0,z1,…`).
    pub fn write_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(&self.to_document())?)?;
        let mut w = csv::Writer::from_path(dir.join("dataset.csv"))?;
        let mut header = vec!["label".to_string()];
        header.extend((0..self.latent_dim()).map(|i| format!("z{i}")));
        w.write_record(&header)?;
        for (z, label) in self.data.latents.iter().zip(&self.data.labels) {
            let mut rec = vec![label.to_string()];
            rec.extend(z.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_bundle(dir: &Path) -> Result<Self> {
        let doc: ScenarioDocument = serde_json::from_str(&fs::read_to_string(dir.join("scenario.json"))?)?;
        let generator = doc.generator.build()?;
        let mut latents = Vec::new();
        let mut labels = Vec::new();
        let mut r = csv::Reader::from_path(dir.join("dataset.csv"))?;
        for rec in r.records() {
            let rec = rec?;
            let label: usize = rec[0].parse().map_err(|_| Error::Config(format!("bad label '{}'", &rec[0])))?;
            let z = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|_| Error::Config(format!("bad coordinate '{s}'"))))
                .collect::<Result<Vec<_>>>()?;
            latents.push(Vector::from_vec(z));
            labels.push(label);
        }
        let penultimate = doc.penultimate.as_ref().map(MapSpec::build).transpose()?;
        let mut classifier = ClassifierHead::new(doc.logits.build()?, doc.default_target)?;
        if let Some(p) = penultimate {
            classifier = classifier.with_penultimate(p)?;
        }
        let ambient = if doc.features.is_empty() {
            AmbientMetric::Euclidean
        } else {
            AmbientMetric::composite(
                doc.features
                    .iter()
                    .map(|f| Ok((f.map.build()?, f.weight)))
                    .collect::<Result<Vec<_>>>()?,
            )?
        };
        Ok(Scenario {
            spec: doc.spec,
            data: LabeledLatentSet::new(latents, labels, generator.clone())?,
            generator,
            classifier,
            ambient,
            standard_eval: EvalEmbedder::new(doc.standard_eval.build()?, EmbedderRole::StandardEval),
            robust_eval: EvalEmbedder::new(doc.robust_eval.build()?, EmbedderRole::RobustEval),
            default_target: doc.default_target,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_basis_is_orthonormal() {
        for a in 0..16 {
            for b in 0..16 {
                let d = dct_basis(16, a).dot(&dct_basis(16, b));
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logistic_fit_separates_a_line() {
        let feats: Vec<Vector> = (0..40).map(|i| Vector::from_vec(vec![i as f64 / 10.0 - 2.0, 1.0])).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let (w, b) = fit_logistic(&feats, &labels, 1000);
        let correct = feats
            .iter()
            .zip(&labels)
            .filter(|(f, &l)| usize::from(w.dot(f) + b > 0.0) == l)
            .count();
        assert_eq!(correct, 40);
    }

    #[test]
    fn unknown_scenario_is_rejected() {
        assert!(matches!(build_scenario(&ScenarioSpec::new("torus", 0)), Err(Error::Unknown { .. })));
    }

    #[test]
    fn normal_draws_have_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..20000).map(|_| standard_normal(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05);
    }
}
