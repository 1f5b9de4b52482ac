//! Ambient and pullback Riemannian metrics, discrete path energy and length,
//! and tangent-space projectors.
//!
//! A latent path `z_0..z_T` is scored by pushing every point through the
//! generator `g` and the ambient feature maps `h_k`:
//!
//! ```text
//! E(z) = ½ Σ_i Σ_k (w_k / δt) ‖h_k(g(z_{i+1})) − h_k(g(z_i))‖²,   δt = 1/T
//! ```
//!
//! With the Euclidean ambient metric the inner sum is the single increment
//! `‖g(z_{i+1}) − g(z_i)‖²`. Lengths use the quadratic form of the pullback
//! metric `G_Z = J_gᵀ G_X J_g` evaluated at the left end of every segment.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::diffmap::MapRef;
use crate::error::{check_finite, check_len, Error, Result};
use crate::linalg::{quadratic_form, symmetric_eigenvalues, weighted_gram};
use crate::{Matrix, Vector};

/// Relative eigenvalue floor below which a pullback metric is reported as
/// ill-conditioned.
pub const CONDITIONING_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct WeightedFeature {
    pub map: MapRef,
    pub weight: f64,
}

/// Metric on the generator's output space.
#[derive(Debug, Clone)]
pub enum AmbientMetric {
    /// `G_X = I`.
    Euclidean,
    /// `G_R(x) = Σ_k w_k J_{h_k}(x)ᵀ J_{h_k}(x)`.
    CompositeFeature(Vec<WeightedFeature>),
}

impl AmbientMetric {
    pub fn composite(features: Vec<(MapRef, f64)>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidMetric("composite metric needs at least one feature map".into()));
        }
        let dim = features[0].0.in_dim();
        let mut out = Vec::with_capacity(features.len());
        for (map, weight) in features {
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(Error::InvalidMetric(format!("feature weight must be positive, got {weight}")));
            }
            if map.in_dim() != dim {
                return Err(Error::Dimension(format!(
                    "feature maps disagree on ambient dimension ({} vs {dim})",
                    map.in_dim()
                )));
            }
            out.push(WeightedFeature { map, weight });
        }
        Ok(AmbientMetric::CompositeFeature(out))
    }

    /// Composite metric with the default weighting `w_k = 1 / N_k`, `N_k`
    /// being the output dimension of `h_k`.
    pub fn composite_default(maps: Vec<MapRef>) -> Result<Self> {
        let weighted = maps
            .into_iter()
            .map(|m| {
                let w = 1.0 / m.out_dim() as f64;
                (m, w)
            })
            .collect();
        Self::composite(weighted)
    }

    pub fn input_dim(&self) -> Option<usize> {
        match self {
            AmbientMetric::Euclidean => None,
            AmbientMetric::CompositeFeature(f) => Some(f[0].map.in_dim()),
        }
    }

    pub fn features(&self) -> &[WeightedFeature] {
        match self {
            AmbientMetric::Euclidean => &[],
            AmbientMetric::CompositeFeature(f) => f,
        }
    }

    fn check_input(&self, x: &Vector) -> Result<()> {
        if let Some(d) = self.input_dim() {
            check_len(d, x.len())?;
        }
        check_finite(x.as_slice(), "ambient point")
    }

    /// Dense ambient metric at `x`.
    pub fn metric_at(&self, x: &Vector) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.metric_unchecked(x))
    }

    pub(crate) fn metric_unchecked(&self, x: &Vector) -> Matrix {
        match self {
            AmbientMetric::Euclidean => Matrix::identity(x.len(), x.len()),
            AmbientMetric::CompositeFeature(features) => {
                let mut g = Matrix::zeros(x.len(), x.len());
                for f in features {
                    g += weighted_gram(&f.map.jacobian_unchecked(x), f.weight);
                }
                g
            }
        }
    }

    /// `G_X(x) v` without assembling `G_X`.
    pub(crate) fn apply_unchecked(&self, x: &Vector, v: &Vector) -> Vector {
        match self {
            AmbientMetric::Euclidean => v.clone(),
            AmbientMetric::CompositeFeature(features) => {
                let mut out = Vector::zeros(x.len());
                for f in features {
                    let jv = f.map.push_forward(x, v);
                    out += f.map.pull_back(x, &jv) * f.weight;
                }
                out
            }
        }
    }
}

pub fn ambient_metric_at(ambient: &AmbientMetric, x: &Vector) -> Result<Matrix> {
    ambient.metric_at(x)
}

/// Generator plus ambient metric: together they define the latent metric
/// field `G_Z(z) = J_g(z)ᵀ G_X(g(z)) J_g(z)`.
#[derive(Debug, Clone)]
pub struct MetricPack {
    generator: MapRef,
    ambient: AmbientMetric,
}

/// Pullback metric at a latent point, with its spectral extremes.
#[derive(Debug, Clone)]
pub struct PullbackMetric {
    pub tensor: Matrix,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

impl PullbackMetric {
    pub fn is_ill_conditioned(&self) -> bool {
        self.min_eigenvalue < CONDITIONING_FLOOR * self.max_eigenvalue
    }
}

impl MetricPack {
    pub fn new(generator: MapRef, ambient: AmbientMetric) -> Result<Self> {
        if let Some(d) = ambient.input_dim() {
            if d != generator.out_dim() {
                return Err(Error::Dimension(format!(
                    "generator outputs {} values but the feature maps expect {d}",
                    generator.out_dim()
                )));
            }
        }
        Ok(Self { generator, ambient })
    }

    pub fn euclidean(generator: MapRef) -> Self {
        Self {
            generator,
            ambient: AmbientMetric::Euclidean,
        }
    }

    pub fn generator(&self) -> &MapRef {
        &self.generator
    }

    pub fn ambient(&self) -> &AmbientMetric {
        &self.ambient
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.in_dim()
    }

    pub fn metric_at(&self, z: &Vector) -> Result<PullbackMetric> {
        self.generator.check_point(z)?;
        let tensor = self.tensor_unchecked(z);
        let ev = symmetric_eigenvalues(&tensor);
        let metric = PullbackMetric {
            min_eigenvalue: ev[0],
            max_eigenvalue: *ev.last().unwrap(),
            tensor,
        };
        if metric.is_ill_conditioned() {
            log::warn!(
                "pullback metric is ill-conditioned at z = {:?}: eigenvalues span [{:e}, {:e}]",
                z.as_slice(),
                metric.min_eigenvalue,
                metric.max_eigenvalue
            );
        }
        Ok(metric)
    }

    pub(crate) fn tensor_unchecked(&self, z: &Vector) -> Matrix {
        let jg = self.generator.jacobian_unchecked(z);
        match &self.ambient {
            AmbientMetric::Euclidean => weighted_gram(&jg, 1.0),
            AmbientMetric::CompositeFeature(features) => {
                let x = self.generator.eval(z);
                let d = z.len();
                let mut g = Matrix::zeros(d, d);
                for f in features {
                    let jac = f.map.jacobian_unchecked(&x) * &jg;
                    g += weighted_gram(&jac, f.weight);
                }
                g
            }
        }
    }

    /// `G_Z(z) u` through forward and reverse sweeps, never assembling a
    /// Jacobian.
    pub fn metric_apply(&self, z: &Vector, u: &Vector) -> Result<Vector> {
        self.generator.check_point(z)?;
        check_len(z.len(), u.len())?;
        Ok(self.metric_apply_unchecked(z, u))
    }

    pub(crate) fn metric_apply_unchecked(&self, z: &Vector, u: &Vector) -> Vector {
        let x = self.generator.eval(z);
        let ju = self.generator.push_forward(z, u);
        let gx = self.ambient.apply_unchecked(&x, &ju);
        self.generator.pull_back(z, &gx)
    }

    /// Ambient point and the feature values the energy is built from (the
    /// ambient point itself for the Euclidean metric).
    fn features(&self, z: &Vector) -> (Vector, Vec<Vector>) {
        let x = self.generator.eval(z);
        let feats = match &self.ambient {
            AmbientMetric::Euclidean => vec![x.clone()],
            AmbientMetric::CompositeFeature(fs) => fs.iter().map(|f| f.map.eval(&x)).collect(),
        };
        (x, feats)
    }

    fn feature_weights(&self) -> Vec<f64> {
        match &self.ambient {
            AmbientMetric::Euclidean => vec![1.0],
            AmbientMetric::CompositeFeature(fs) => fs.iter().map(|f| f.weight).collect(),
        }
    }
}

pub fn pullback_metric_at(pack: &MetricPack, z: &Vector) -> Result<PullbackMetric> {
    pack.metric_at(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointPolicy {
    BothFixed,
    EndFree,
}

/// Ordered latent points `z_0..z_T`, `T ≥ 1`; the time step `1/T` is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    points: Vec<Vector>,
    policy: EndpointPolicy,
}

impl LatentPath {
    pub fn new(points: Vec<Vector>, policy: EndpointPolicy) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegeneratePath(format!(
                "a path needs at least two points, got {}",
                points.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::DegeneratePath("zero-dimensional latent points".into()));
        }
        for p in &points {
            check_len(dim, p.len())?;
            check_finite(p.as_slice(), "path point")?;
        }
        Ok(Self { points, policy })
    }

    /// Number of segments `T`.
    pub fn segments(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vector] {
        &self.points
    }

    pub(crate) fn points_mut(&mut self) -> &mut [Vector] {
        &mut self.points
    }

    pub fn start(&self) -> &Vector {
        &self.points[0]
    }

    pub fn end(&self) -> &Vector {
        self.points.last().unwrap()
    }

    pub fn policy(&self) -> EndpointPolicy {
        self.policy
    }

    pub fn with_policy(mut self, policy: EndpointPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self {
            points,
            policy: self.policy,
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], policy: EndpointPolicy) -> Result<Self> {
        Self::new(rows.iter().map(|r| Vector::from_column_slice(r)).collect(), policy)
    }

    fn check_against(&self, pack: &MetricPack) -> Result<()> {
        check_len(pack.latent_dim(), self.dim())
    }
}

impl Serialize for LatentPath {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LatentPath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        LatentPath::from_rows(&rows, EndpointPolicy::BothFixed).map_err(serde::de::Error::custom)
    }
}

pub fn path_energy(path: &LatentPath, pack: &MetricPack) -> Result<f64> {
    path.check_against(pack)?;
    let t = path.segments() as f64;
    let weights = pack.feature_weights();
    let feats: Vec<Vec<Vector>> = path.points().iter().map(|z| pack.features(z).1).collect();
    let mut energy = 0.0;
    for pair in feats.windows(2) {
        for (k, w) in weights.iter().enumerate() {
            energy += w * (&pair[1][k] - &pair[0][k]).norm_squared();
        }
    }
    Ok(0.5 * t * energy)
}

/// Energy and its gradient with respect to every path point (endpoints
/// included; solvers decide which entries to apply).
pub fn path_energy_gradient(path: &LatentPath, pack: &MetricPack) -> Result<(f64, Vec<Vector>)> {
    path.check_against(pack)?;
    let n = path.points().len();
    let t = path.segments() as f64;
    let weights = pack.feature_weights();
    let evaluated: Vec<(Vector, Vec<Vector>)> = path.points().iter().map(|z| pack.features(z)).collect();

    let mut energy = 0.0;
    for pair in evaluated.windows(2) {
        for (k, w) in weights.iter().enumerate() {
            energy += w * (&pair[1].1[k] - &pair[0].1[k]).norm_squared();
        }
    }
    energy *= 0.5 * t;

    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let (x, feats) = &evaluated[i];
        let mut grad_x = Vector::zeros(x.len());
        for (k, w) in weights.iter().enumerate() {
            let mut c = Vector::zeros(feats[k].len());
            if i > 0 {
                c += &feats[k] - &evaluated[i - 1].1[k];
            }
            if i + 1 < n {
                c -= &evaluated[i + 1].1[k] - &feats[k];
            }
            c *= w * t;
            match pack.ambient() {
                AmbientMetric::Euclidean => grad_x += c,
                AmbientMetric::CompositeFeature(fs) => grad_x += fs[k].map.pull_back(x, &c),
            }
        }
        grads.push(pack.generator().pull_back(&path.points()[i], &grad_x));
    }
    Ok((energy, grads))
}

/// `√(Δz_iᵀ G_Z(z_i) Δz_i)` for every segment.
pub fn segment_lengths(path: &LatentPath, pack: &MetricPack) -> Result<Vec<f64>> {
    path.check_against(pack)?;
    Ok(path
        .points()
        .windows(2)
        .map(|pair| {
            let dz = &pair[1] - &pair[0];
            quadratic_form(&pack.tensor_unchecked(&pair[0]), &dz).max(0.0).sqrt()
        })
        .collect())
}

pub fn path_length(path: &LatentPath, pack: &MetricPack) -> Result<f64> {
    Ok(segment_lengths(path, pack)?.iter().sum())
}

/// `½ T Σ_i Δz_iᵀ G_Z(z_i) Δz_i`: the energy of the same left-endpoint
/// discretization the length uses, so `length² ≤ 2 · quadratic_energy`.
pub fn quadratic_energy(path: &LatentPath, pack: &MetricPack) -> Result<f64> {
    let t = path.segments() as f64;
    Ok(0.5 * t * segment_lengths(path, pack)?.iter().map(|l| l * l).sum::<f64>())
}

/// Orthogonal projector `J (JᵀJ)⁻¹ Jᵀ` onto the tangent image of `map` at
/// `z`, computed from the thin SVD.
pub fn tangent_projector(map: &MapRef, z: &Vector) -> Result<Matrix> {
    let jac = map.jacobian(z)?;
    if jac.ncols() > jac.nrows() {
        return Err(Error::SingularProjector { sigma_min: 0.0 });
    }
    let svd = jac.svd(true, false);
    let sigma_min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(sigma_min > 1e-8) {
        return Err(Error::SingularProjector { sigma_min });
    }
    let u = svd.u.expect("left singular vectors requested");
    Ok(weighted_gram(&u.transpose(), 1.0))
}
