//! Brute-force shortest paths for 2-D latents.
//!
//! The latent box is covered by a regular grid whose nodes connect to the `k`
//! nearest lattice offsets. An edge `u → v` costs `√(Δᵀ G_Z(u) Δ)`, the
//! local quadratic-form length at its source node. The two query endpoints
//! are extra nodes linked to all grid nodes inside the stencil radius.
//! Dijkstra runs on this implicit graph, so edges are never materialized.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MetricPack;
use crate::synth::Scenario;
use crate::Vector;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct OracleConfig {
    /// Grid nodes per axis.
    pub resolution: usize,
    /// Lattice offsets per node.
    pub k_neighbors: usize,
    /// Box margin as a fraction of the bounding-box extent.
    pub margin: f64,
    /// Re-solve at twice the resolution and compare lengths.
    pub check_convergence: bool,
    /// Largest accepted relative change under refinement.
    pub convergence_tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            resolution: 200,
            k_neighbors: 80,
            margin: 0.2,
            check_convergence: true,
            convergence_tolerance: 0.02,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::Config("oracle resolution must be >= 2".into()));
        }
        if self.k_neighbors < 1 {
            return Err(Error::Config("oracle needs at least one neighbor".into()));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config("oracle margin must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleGeodesic {
    /// Node sequence from `z0` to `zT`.
    pub path: Vec<Vec<f64>>,
    pub length: f64,
    pub resolution: usize,
    /// Length at twice the resolution, when the convergence check ran.
    pub refined_length: Option<f64>,
    /// `|L − L_refined| / L_refined`.
    pub relative_change: Option<f64>,
    pub converged: Option<bool>,
}

/// Lattice offsets sorted by squared length, then lexicographically.
pub fn stencil(k: usize) -> Vec<(i64, i64)> {
    let mut radius = 1i64;
    loop {
        let mut offsets: Vec<(i64, i64)> = (-radius..=radius)
            .flat_map(|a| (-radius..=radius).map(move |b| (a, b)))
            .filter(|&(a, b)| (a, b) != (0, 0) && a * a + b * b <= radius * radius)
            .collect();
        if offsets.len() >= k {
            offsets.sort_by_key(|&(a, b)| (a * a + b * b, a, b));
            offsets.truncate(k);
            return offsets;
        }
        radius += 1;
    }
}

/// Axis-aligned box around `points`, widened by `margin` of its extent.
pub fn bounding_box(points: &[&Vector], margin: f64) -> Result<(Vector, Vector)> {
    let first = points.first().ok_or_else(|| Error::InsufficientData("bounding box of no points".into()))?;
    let mut lo = (*first).clone();
    let mut hi = (*first).clone();
    for p in &points[1..] {
        lo = lo.zip_map(p, f64::min);
        hi = hi.zip_map(p, f64::max);
    }
    let extent = (&hi - &lo).map(|e| if e > 0.0 { e } else { 1.0 });
    Ok((&lo - &extent * margin, &hi + &extent * margin))
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Grid {
    lo: Vector,
    step: Vector,
    n: usize,
    /// Row-major `[g00, g01, g11]` per grid node.
    metric: Vec<[f64; 3]>,
}

impl Grid {
    fn build(pack: &MetricPack, lo: &Vector, hi: &Vector, n: usize) -> Result<Self> {
        if pack.latent_dim() != 2 {
            return Err(Error::Dimension(format!("oracle needs a 2-D latent, got {}", pack.latent_dim())));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let metric = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let z = Vector::from_vec(vec![lo[0] + (idx / n) as f64 * step[0], lo[1] + (idx % n) as f64 * step[1]]);
                let g = pack.metric_at(&z)?.tensor;
                Ok([g[(0, 0)], 0.5 * (g[(0, 1)] + g[(1, 0)]), g[(1, 1)]])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lo: lo.clone(),
            step,
            n,
            metric,
        })
    }

    fn point(&self, idx: usize) -> Vector {
        Vector::from_vec(vec![
            self.lo[0] + (idx / self.n) as f64 * self.step[0],
            self.lo[1] + (idx % self.n) as f64 * self.step[1],
        ])
    }

    /// Fractional grid coordinates of `z`.
    fn cell(&self, z: &Vector) -> (f64, f64) {
        ((z[0] - self.lo[0]) / self.step[0], (z[1] - self.lo[1]) / self.step[1])
    }

    /// Grid nodes within `radius` cells of `z`.
    fn near(&self, z: &Vector, radius: f64) -> Vec<usize> {
        let (ci, cj) = self.cell(z);
        let span = |c: f64| {
            let a = (c - radius).ceil().max(0.0) as usize;
            let b = (c + radius).floor().min((self.n - 1) as f64);
            (a, b)
        };
        let (i0, i1) = span(ci);
        let (j0, j1) = span(cj);
        if i1 < 0.0 || j1 < 0.0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for i in i0..=(i1 as usize) {
            for j in j0..=(j1 as usize) {
                let (di, dj) = (i as f64 - ci, j as f64 - cj);
                if di * di + dj * dj <= radius * radius + 1e-12 {
                    out.push(i * self.n + j);
                }
            }
        }
        out
    }
}

fn quad_length(g: &[f64; 3], d: &Vector) -> f64 {
    (g[0] * d[0] * d[0] + 2.0 * g[1] * d[0] * d[1] + g[2] * d[1] * d[1]).max(0.0).sqrt()
}

fn packed(pack: &MetricPack, z: &Vector) -> Result<[f64; 3]> {
    let g = pack.metric_at(z)?.tensor;
    Ok([g[(0, 0)], 0.5 * (g[(0, 1)] + g[(1, 0)]), g[(1, 1)]])
}

fn solve_once(pack: &MetricPack, grid: &Grid, z0: &Vector, zt: &Vector, offsets: &[(i64, i64)]) -> Result<(Vec<Vector>, f64)> {
    let n = grid.n;
    let nodes = n * n;
    let (source, target) = (nodes, nodes + 1);
    let radius = offsets.iter().map(|&(a, b)| ((a * a + b * b) as f64).sqrt()).fold(0.0, f64::max);
    let g_source = packed(pack, z0)?;
    let target_links: std::collections::HashSet<usize> = grid.near(zt, radius).into_iter().collect();

    let mut dist = vec![f64::INFINITY; nodes + 2];
    let mut prev = vec![usize::MAX; nodes + 2];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry { dist: 0.0, node: source });

    while let Some(Entry { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == target {
            break;
        }
        let mut relax = |v: usize, w: f64, heap: &mut BinaryHeap<Entry>| {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Entry { dist: nd, node: v });
            }
        };
        if u == source {
            for v in grid.near(z0, radius) {
                relax(v, quad_length(&g_source, &(grid.point(v) - z0)), &mut heap);
            }
            let d = (zt - z0).component_div(&grid.step);
            if d.norm_squared() <= radius * radius {
                relax(target, quad_length(&g_source, &(zt - z0)), &mut heap);
            }
            continue;
        }
        let (i, j) = ((u / n) as i64, (u % n) as i64);
        let g = &grid.metric[u];
        for &(a, b) in offsets {
            let (vi, vj) = (i + a, j + b);
            if vi < 0 || vj < 0 || vi >= n as i64 || vj >= n as i64 {
                continue;
            }
            let delta = Vector::from_vec(vec![a as f64 * grid.step[0], b as f64 * grid.step[1]]);
            relax(vi as usize * n + vj as usize, quad_length(g, &delta), &mut heap);
        }
        if target_links.contains(&u) {
            relax(target, quad_length(g, &(zt - grid.point(u))), &mut heap);
        }
    }

    if !dist[target].is_finite() {
        return Err(Error::Disconnected);
    }
    let mut nodes_rev = vec![target];
    while let Some(&last) = nodes_rev.last() {
        if last == source {
            break;
        }
        nodes_rev.push(prev[last]);
    }
    let path = nodes_rev
        .into_iter()
        .rev()
        .map(|v| match v {
            v if v == source => z0.clone(),
            v if v == target => zt.clone(),
            v => grid.point(v),
        })
        .collect();
    Ok((path, dist[target]))
}

/// Precomputed metric samples over a fixed box, reusable across queries.
pub struct OracleGrid {
    pack: MetricPack,
    cfg: OracleConfig,
    lo: Vector,
    hi: Vector,
    offsets: Vec<(i64, i64)>,
    coarse: Grid,
    refined: Option<Grid>,
}

impl OracleGrid {
    /// Grid over the bounding box of `points` plus the configured margin.
    pub fn covering(pack: &MetricPack, points: &[&Vector], cfg: &OracleConfig) -> Result<Self> {
        cfg.validate()?;
        if pack.latent_dim() != 2 || points.iter().any(|p| p.len() != 2) {
            return Err(Error::Dimension("the grid oracle needs a 2-D latent space".into()));
        }
        let (lo, hi) = bounding_box(points, cfg.margin)?;
        let coarse = Grid::build(pack, &lo, &hi, cfg.resolution)?;
        let refined = if cfg.check_convergence {
            Some(Grid::build(pack, &lo, &hi, 2 * cfg.resolution)?)
        } else {
            None
        };
        Ok(Self {
            pack: pack.clone(),
            cfg: cfg.clone(),
            lo,
            hi,
            offsets: stencil(cfg.k_neighbors),
            coarse,
            refined,
        })
    }

    pub fn contains(&self, z: &Vector) -> bool {
        z.len() == 2 && (0..2).all(|i| z[i] >= self.lo[i] && z[i] <= self.hi[i])
    }

    pub fn shortest_path(&self, z0: &Vector, zt: &Vector) -> Result<OracleGeodesic> {
        for z in [z0, zt] {
            crate::error::check_len(2, z.len())?;
            if !self.contains(z) {
                return Err(Error::Config(format!("endpoint {:?} lies outside the oracle grid", z.as_slice())));
            }
        }
        let (path, length) = solve_once(&self.pack, &self.coarse, z0, zt, &self.offsets)?;
        let mut out = OracleGeodesic {
            path: path.iter().map(|p| p.iter().copied().collect()).collect(),
            length,
            resolution: self.cfg.resolution,
            refined_length: None,
            relative_change: None,
            converged: None,
        };
        if let Some(fine) = &self.refined {
            let (_, refined) = solve_once(&self.pack, fine, z0, zt, &self.offsets)?;
            let change = if refined > 0.0 { (length - refined).abs() / refined } else { (length - refined).abs() };
            let converged = change < self.cfg.convergence_tolerance;
            if !converged {
                log::warn!("oracle length changed by {:.2}% under grid refinement", 100.0 * change);
            }
            out.refined_length = Some(refined);
            out.relative_change = Some(change);
            out.converged = Some(converged);
        }
        Ok(out)
    }
}

/// Shortest path from `z0` to `zt` on the grid graph over the box spanned by
/// `extent_points`, `z0` and `zt` (plus margin).
pub fn oracle_geodesic_in(pack: &MetricPack, extent_points: &[Vector], z0: &Vector, zt: &Vector, cfg: &OracleConfig) -> Result<OracleGeodesic> {
    let mut pts: Vec<&Vector> = extent_points.iter().collect();
    pts.push(z0);
    pts.push(zt);
    OracleGrid::covering(pack, &pts, cfg)?.shortest_path(z0, zt)
}

/// Oracle on a scenario's robust pullback geometry, with the grid covering
/// the dataset and both endpoints.
pub fn oracle_geodesic(sc: &Scenario, z0: &Vector, zt: &Vector, cfg: &OracleConfig) -> Result<OracleGeodesic> {
    oracle_geodesic_in(&sc.metric_pack(), &sc.data.latents, z0, zt, cfg)
}

/// Reusable oracle over the scenario's dataset box.
pub fn scenario_grid(sc: &Scenario, cfg: &OracleConfig) -> Result<OracleGrid> {
    let pts: Vec<&Vector> = sc.data.latents.iter().collect();
    OracleGrid::covering(&sc.metric_pack(), &pts, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::diffmap::{Identity, LinearMap, SphereImmersion};
    use crate::Matrix;

    fn quick() -> OracleConfig {
        OracleConfig {
            resolution: 60,
            check_convergence: false,
            ..Default::default()
        }
    }

    #[test]
    fn stencil_of_eighty_is_the_radius_five_disc() {
        let s = stencil(80);
        assert_eq!(s.len(), 80);
        assert!(s.iter().all(|&(a, b)| a * a + b * b <= 25));
        assert_eq!(s[0], (-1, 0));
    }

    #[test]
    fn euclidean_oracle_matches_straight_line() {
        let pack = MetricPack::euclidean(Arc::new(Identity::new(2).unwrap()));
        let z0 = Vector::from_vec(vec![-1.0, -0.3]);
        let zt = Vector::from_vec(vec![1.2, 0.9]);
        let out = oracle_geodesic_in(&pack, &[], &z0, &zt, &quick()).unwrap();
        let straight = (&zt - &z0).norm();
        assert!(out.length >= straight - 1e-12);
        assert!(out.length < 1.01 * straight, "{} vs {}", out.length, straight);
        assert_eq!(out.path.first().unwrap().as_slice(), z0.as_slice());
        assert_eq!(out.path.last().unwrap().as_slice(), zt.as_slice());
    }

    #[test]
    fn anisotropic_scaling_is_respected() {
        let g = Arc::new(LinearMap::without_bias(Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 10.0]))).unwrap());
        let pack = MetricPack::euclidean(g);
        let z0 = Vector::from_vec(vec![0.0, 0.0]);
        let zt = Vector::from_vec(vec![1.0, 0.1]);
        let out = oracle_geodesic_in(&pack, &[], &z0, &zt, &quick()).unwrap();
        let exact = 2f64.sqrt();
        assert!((out.length - exact).abs() / exact < 0.01);
    }

    #[test]
    fn sphere_quarter_circle() {
        let pack = MetricPack::euclidean(Arc::new(SphereImmersion));
        let half = std::f64::consts::FRAC_PI_2;
        let z0 = Vector::from_vec(vec![half, 0.0]);
        let zt = Vector::from_vec(vec![half, half]);
        let out = oracle_geodesic_in(&pack, &[], &z0, &zt, &quick()).unwrap();
        assert!((out.length - half).abs() / half < 0.02);
    }

    #[test]
    fn rejects_non_planar_latents() {
        let pack = MetricPack::euclidean(Arc::new(Identity::new(3).unwrap()));
        let z = Vector::zeros(3);
        assert!(matches!(oracle_geodesic_in(&pack, &[], &z, &z, &quick()), Err(Error::Dimension(_))));
    }

    #[test]
    fn convergence_check_reports_refinement() {
        let pack = MetricPack::euclidean(Arc::new(Identity::new(2).unwrap()));
        let cfg = OracleConfig {
            resolution: 30,
            ..Default::default()
        };
        let out = oracle_geodesic_in(&pack, &[], &Vector::from_vec(vec![0.0, 0.0]), &Vector::from_vec(vec![1.0, 0.3]), &cfg).unwrap();
        assert_eq!(out.converged, Some(true));
        assert!(out.refined_length.unwrap() <= out.length + 1e-12);
    }
}
