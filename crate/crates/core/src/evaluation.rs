//! Evaluation metrics: induced distances, manifold alignment, semantic
//! margin, COUT, Fréchet distance, path smoothness, dispersion statistics
//! and target retention.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{ClassifierHead, RunReport, RunStatus};
use crate::diffmap::MapRef;
use crate::error::{check_len, Error, Result};
use crate::geometry::{tangent_projector, LatentPath, MetricPack};
use crate::linalg::{asymmetry, psd_sqrt, quadratic_form, symmetric_eigenvalues, symmetrize};
use crate::{Matrix, Vector};

const SYMMETRY_TOLERANCE: f64 = 1e-9;
const PSD_TOLERANCE: f64 = 1e-8;

/// `√(Δxᵀ G Δx)` with `Δx = x_t − x_0` and `G` the ambient metric at `x_0`.
pub fn induced_distance(x0: &Vector, xt: &Vector, g: &Matrix) -> Result<f64> {
    check_len(x0.len(), xt.len())?;
    if g.nrows() != x0.len() || g.ncols() != x0.len() {
        return Err(Error::Dimension(format!(
            "metric is {}x{}, points have length {}",
            g.nrows(),
            g.ncols(),
            x0.len()
        )));
    }
    if asymmetry(g) > SYMMETRY_TOLERANCE {
        return Err(Error::InvalidMetric(format!("asymmetry {:e}", asymmetry(g))));
    }
    Ok(quadratic_form(g, &(xt - x0)).max(0.0).sqrt())
}

pub fn l1_distance(x0: &Vector, xt: &Vector) -> Result<f64> {
    check_len(x0.len(), xt.len())?;
    Ok((xt - x0).abs().sum())
}

pub fn l2_distance(x0: &Vector, xt: &Vector) -> Result<f64> {
    check_len(x0.len(), xt.len())?;
    Ok((xt - x0).norm())
}

/// Fraction of the (normalized) ambient displacement captured by the
/// tangent space of `map` at `z_orig`.
pub fn mas(z_orig: &Vector, z_cf: &Vector, map: &MapRef) -> Result<f64> {
    let v = map.value(z_cf)? - map.value(z_orig)?;
    mas_of_displacement(map, z_orig, &v)
}

/// Alignment score of an explicit ambient displacement at `map(z)`.
pub fn mas_of_displacement(map: &MapRef, z: &Vector, displacement: &Vector) -> Result<f64> {
    check_len(map.out_dim(), displacement.len())?;
    let norm = displacement.norm();
    if norm == 0.0 {
        return Err(Error::UndefinedScore("zero displacement".into()));
    }
    let v = displacement / norm;
    let p = tangent_projector(map, z)?;
    Ok(((&p * &v).norm_squared() / v.norm_squared()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderRole {
    StandardEval,
    RobustEval,
}

/// Feature map used only for evaluation, tagged with its role.
#[derive(Debug, Clone)]
pub struct EvalEmbedder {
    pub map: MapRef,
    pub role: EmbedderRole,
}

impl EvalEmbedder {
    pub fn new(map: MapRef, role: EmbedderRole) -> Self {
        Self { map, role }
    }

    pub fn embed(&self, x: &Vector) -> Result<Vector> {
        self.map.value(x)
    }

    /// Fails when the embedder shares an allocation with the generator or
    /// any ambient feature map of `pack`.
    pub fn ensure_distinct_from(&self, pack: &MetricPack) -> Result<()> {
        let shared = Arc::ptr_eq(&self.map, pack.generator())
            || pack.ambient().features().iter().any(|f| Arc::ptr_eq(&self.map, &f.map));
        if shared {
            return Err(Error::Config(format!(
                "{:?} embedder is one of the optimization-time maps",
                self.role
            )));
        }
        Ok(())
    }
}

/// Latent points with class labels, decoded by a generator.
#[derive(Debug, Clone)]
pub struct LabeledLatentSet {
    pub latents: Vec<Vector>,
    pub labels: Vec<usize>,
    pub generator: MapRef,
}

/// A labeled set mapped into an embedder's feature space.
#[derive(Debug, Clone)]
pub struct EmbeddedSet {
    pub features: Vec<Vector>,
    pub labels: Vec<usize>,
}

impl LabeledLatentSet {
    pub fn new(latents: Vec<Vector>, labels: Vec<usize>, generator: MapRef) -> Result<Self> {
        check_len(latents.len(), labels.len())?;
        for z in &latents {
            check_len(generator.in_dim(), z.len())?;
        }
        Ok(Self { latents, labels, generator })
    }

    pub fn ambient_points(&self) -> Result<Vec<Vector>> {
        self.latents.iter().map(|z| self.generator.value(z)).collect()
    }

    pub fn embed(&self, embedder: &EvalEmbedder) -> Result<EmbeddedSet> {
        let features = self
            .latents
            .iter()
            .map(|z| embedder.embed(&self.generator.value(z)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddedSet {
            features,
            labels: self.labels.clone(),
        })
    }

    pub fn indices_of(&self, label: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == label).collect()
    }
}

fn mean_knn_distance(query: &Vector, points: &[&Vector], k: usize) -> f64 {
    let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((*p - query).norm(), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d[..k].iter().map(|(v, _)| v).sum::<f64>() / k as f64
}

/// `d_other − d_target` where each term is the mean distance from the
/// embedded counterfactual to its `k` nearest neighbours in that partition.
pub fn semantic_margin(x_cf: &Vector, data: &EmbeddedSet, embedder: &EvalEmbedder, target: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let q = embedder.embed(x_cf)?;
    let (mut tgt, mut other) = (Vec::new(), Vec::new());
    for (f, &l) in data.features.iter().zip(&data.labels) {
        check_len(q.len(), f.len())?;
        if l == target {
            tgt.push(f);
        } else {
            other.push(f);
        }
    }
    if tgt.len() < k || other.len() < k {
        return Err(Error::InsufficientData(format!(
            "need {k} points per partition, have {} target and {} other",
            tgt.len(),
            other.len()
        )));
    }
    Ok(mean_knn_distance(&q, &other, k) - mean_knn_distance(&q, &tgt, k))
}

/// Target-logit change per unit of penultimate-feature change.
pub fn cout(head: &ClassifierHead, x_orig: &Vector, x_cf: &Vector, eps: f64) -> Result<f64> {
    let features = head
        .penultimate()
        .ok_or_else(|| Error::Config("cout needs a classifier with a penultimate feature map".into()))?;
    let t = head.target();
    let df = head.logits().value(x_cf)?[t] - head.logits().value(x_orig)?[t];
    let dh = (features.value(x_cf)? - features.value(x_orig)?).norm();
    Ok(df / (dh + eps))
}

fn checked_covariance(c: &Matrix, what: &str) -> Result<Matrix> {
    if c.nrows() != c.ncols() {
        return Err(Error::Dimension(format!("{what} covariance is not square")));
    }
    if asymmetry(c) > PSD_TOLERANCE {
        return Err(Error::InvalidMetric(format!("{what} covariance is not symmetric")));
    }
    let s = symmetrize(c);
    let scale = 1.0f64.max(s.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    if symmetric_eigenvalues(&s).first().is_some_and(|&l| l < -PSD_TOLERANCE * scale) {
        return Err(Error::InvalidMetric(format!("{what} covariance is not positive semidefinite")));
    }
    Ok(s)
}

/// `‖μ₁ − μ₂‖² + tr(C₁ + C₂ − 2 (√C₁ C₂ √C₁)^{1/2})`.
pub fn frechet_distance(mu1: &Vector, cov1: &Matrix, mu2: &Vector, cov2: &Matrix) -> Result<f64> {
    check_len(mu1.len(), mu2.len())?;
    let c1 = checked_covariance(cov1, "first")?;
    let c2 = checked_covariance(cov2, "second")?;
    if c1.nrows() != mu1.len() || c2.nrows() != mu1.len() {
        return Err(Error::Dimension("covariance and mean dimensions differ".into()));
    }
    let s1 = psd_sqrt(&c1);
    let cross = psd_sqrt(&(&s1 * &c2 * &s1)).trace();
    let d = (mu1 - mu2).norm_squared() + c1.trace() + c2.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Sample mean and unbiased covariance.
pub fn gaussian_fit(features: &[Vector]) -> Result<(Vector, Matrix)> {
    if features.len() < 2 {
        return Err(Error::InsufficientData("a Gaussian fit needs at least 2 samples".into()));
    }
    let d = features[0].len();
    let mut mu = Vector::zeros(d);
    for f in features {
        check_len(d, f.len())?;
        mu += f;
    }
    mu /= features.len() as f64;
    let mut cov = Matrix::zeros(d, d);
    for f in features {
        let c = f - &mu;
        cov += &c * c.transpose();
    }
    cov /= (features.len() - 1) as f64;
    Ok((mu, symmetrize(&cov)))
}

/// `(1/T) Σ_t ‖φ(g(z_t)) − φ(g(z_{t+1}))‖`.
pub fn path_step_smoothness(path: &LatentPath, generator: &MapRef, embedder: &EvalEmbedder) -> Result<f64> {
    let embedded = path
        .points()
        .iter()
        .map(|z| embedder.embed(&generator.value(z)?))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = embedded.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum();
    Ok(total / path.segments() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityStats {
    pub cdr: f64,
    pub iocr: f64,
    pub diameter: f64,
}

fn pairwise(points: &[Vector]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut count = 0usize;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = (&points[i] - &points[j]).norm();
            sum += d;
            max = max.max(d);
            count += 1;
        }
    }
    (sum / count as f64, max)
}

/// Dispersion of counterfactuals (ambient points) in embedder space,
/// relative to a target-class baseline and to their initializations.
pub fn sensitivity_stats(cfs: &[Vector], inits: &[Vector], baseline: f64, embedder: &EvalEmbedder) -> Result<SensitivityStats> {
    if cfs.len() < 2 {
        return Err(Error::InsufficientData("sensitivity statistics need at least 2 counterfactuals".into()));
    }
    check_len(cfs.len(), inits.len())?;
    if !(baseline > 0.0) {
        return Err(Error::UndefinedScore("target-pair baseline must be positive".into()));
    }
    let e_cf = cfs.iter().map(|x| embedder.embed(x)).collect::<Result<Vec<_>>>()?;
    let e_init = inits.iter().map(|x| embedder.embed(x)).collect::<Result<Vec<_>>>()?;
    let (cf_mean, diameter) = pairwise(&e_cf);
    let (init_mean, _) = pairwise(&e_init);
    if init_mean == 0.0 {
        return Err(Error::UndefinedScore("initializations have zero dispersion".into()));
    }
    Ok(SensitivityStats {
        cdr: cf_mean / baseline,
        iocr: cf_mean / init_mean,
        diameter,
    })
}

/// Mean embedder distance over `pairs` random distinct pairs of
/// target-class points.
pub fn target_pair_baseline(data: &LabeledLatentSet, target: usize, embedder: &EvalEmbedder, pairs: usize, seed: u64) -> Result<f64> {
    let idx = data.indices_of(target);
    if idx.len() < 2 || pairs == 0 {
        return Err(Error::InsufficientData("baseline needs two target-class points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..pairs {
        let pick = sample(&mut rng, idx.len(), 2);
        let a = embedder.embed(&data.generator.value(&data.latents[idx[pick.index(0)]])?)?;
        let b = embedder.embed(&data.generator.value(&data.latents[idx[pick.index(1)]])?)?;
        total += (a - b).norm();
    }
    Ok(total / pairs as f64)
}

/// Fraction of runs whose final ambient point is classified as their target.
/// Diverged runs count as misses.
pub fn target_retention(reports: &[RunReport], head: &ClassifierHead) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::InsufficientData("no runs to score".into()));
    }
    let mut hits = 0usize;
    for r in reports {
        if r.status != RunStatus::Ok {
            continue;
        }
        let h = head.retarget(r.target_class)?;
        if h.is_target(&r.final_ambient_vector())? {
            hits += 1;
        }
    }
    Ok(hits as f64 / reports.len() as f64)
}
