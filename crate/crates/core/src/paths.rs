//! Path initialization, arc-length resampling and the fixed-endpoint
//! geodesic solver.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{path_energy, path_energy_gradient, EndpointPolicy, LatentPath, MetricPack};
use crate::optim::{Optimizer, OptimizerKind};
use crate::Vector;

/// `z_i = z0 + (i/T)(zT − z0)`, endpoints copied exactly.
pub fn init_linear(z0: &Vector, zt: &Vector, segments: usize) -> Result<LatentPath> {
    check_len(z0.len(), zt.len())?;
    if segments < 1 {
        return Err(Error::DegeneratePath("a path needs T >= 1".into()));
    }
    let delta = zt - z0;
    let mut points: Vec<Vector> = (0..=segments)
        .map(|i| z0 + &delta * (i as f64 / segments as f64))
        .collect();
    points[0] = z0.clone();
    points[segments] = zt.clone();
    LatentPath::new(points, EndpointPolicy::BothFixed)
}

/// Great-arc interpolation of the directions with a linear blend of the
/// radii.
pub fn init_spherical(z0: &Vector, zt: &Vector, segments: usize) -> Result<LatentPath> {
    check_len(z0.len(), zt.len())?;
    if segments < 1 {
        return Err(Error::DegeneratePath("a path needs T >= 1".into()));
    }
    let (r0, rt) = (z0.norm(), zt.norm());
    if r0 == 0.0 || rt == 0.0 {
        return Err(Error::UndefinedArc("zero vector has no direction".into()));
    }
    let (u0, ut) = (z0 / r0, zt / rt);
    let omega = u0.dot(&ut).clamp(-1.0, 1.0).acos();
    if std::f64::consts::PI - omega < 1e-6 {
        return Err(Error::UndefinedArc("antipodal endpoints".into()));
    }
    let direction = |t: f64| -> Vector {
        if omega < 1e-9 {
            let d = &u0 * (1.0 - t) + &ut * t;
            let n = d.norm();
            d / n
        } else {
            let s = omega.sin();
            &u0 * (((1.0 - t) * omega).sin() / s) + &ut * ((t * omega).sin() / s)
        }
    };
    let mut points: Vec<Vector> = (0..=segments)
        .map(|i| {
            let t = i as f64 / segments as f64;
            direction(t) * ((1.0 - t) * r0 + t * rt)
        })
        .collect();
    points[0] = z0.clone();
    points[segments] = zt.clone();
    LatentPath::new(points, EndpointPolicy::BothFixed)
}

/// Truncates the path at `new_end_index` and resamples the remaining
/// polyline uniformly in latent arc length back to `T + 1` points.
pub fn densify_midpoints(path: &LatentPath, new_end_index: usize) -> Result<LatentPath> {
    let t = path.segments();
    if new_end_index < 1 || new_end_index > t {
        return Err(Error::IndexOutOfRange {
            index: new_end_index,
            max: t,
        });
    }
    let kept = &path.points()[..=new_end_index];
    let mut cumulative = Vec::with_capacity(kept.len());
    cumulative.push(0.0);
    for w in kept.windows(2) {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + (&w[1] - &w[0]).norm());
    }
    let total = *cumulative.last().unwrap();

    let mut points = Vec::with_capacity(t + 1);
    points.push(kept[0].clone());
    let mut seg = 0;
    for i in 1..t {
        if total == 0.0 {
            points.push(kept[0].clone());
            continue;
        }
        let s = total * i as f64 / t as f64;
        while seg + 1 < kept.len() - 1 && cumulative[seg + 1] < s {
            seg += 1;
        }
        let span = cumulative[seg + 1] - cumulative[seg];
        let frac = if span > 0.0 { (s - cumulative[seg]) / span } else { 0.0 };
        points.push(&kept[seg] + (&kept[seg + 1] - &kept[seg]) * frac);
    }
    points.push(kept[new_end_index].clone());
    LatentPath::new(points, path.policy())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct Phase1Config {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Relative energy decrease below which the solver may stop early.
    pub tolerance: f64,
    pub early_stop: bool,
    /// Halve a step (up to 20 times) until the energy does not increase.
    pub backtracking: bool,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::PlainGradient,
            tolerance: 1e-9,
            early_stop: false,
            backtracking: false,
        }
    }
}

impl Phase1Config {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("phase-1 steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("phase-1 learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTraceRow {
    pub step: usize,
    pub energy: f64,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct GeodesicSolve {
    pub path: LatentPath,
    /// Row `s` describes the path after `s` updates.
    pub trace: Vec<EnergyTraceRow>,
}

impl GeodesicSolve {
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        write_energy_trace(&self.trace, out)
    }
}

pub fn write_energy_trace<W: Write>(trace: &[EnergyTraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

const MAX_HALVINGS: usize = 20;

/// Minimizes the discrete path energy over the interior points with both
/// endpoints pinned.
pub fn phase1_geodesic(path: &LatentPath, pack: &MetricPack, cfg: &Phase1Config) -> Result<GeodesicSolve> {
    cfg.validate()?;
    if path.policy() != EndpointPolicy::BothFixed {
        return Err(Error::Config("phase 1 requires both endpoints fixed".into()));
    }
    let mut path = path.clone();
    let t = path.segments();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut previous: Option<f64> = None;

    for step in 0..=cfg.steps {
        let (energy, grads) = path_energy_gradient(&path, pack)?;
        let interior = &grads[1..t];
        if !energy.is_finite() || interior.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged {
                step,
                what: "non-finite energy gradient".into(),
            });
        }
        let max_grad_norm = interior.iter().map(|g| g.norm()).fold(0.0, f64::max);
        trace.push(EnergyTraceRow {
            step,
            energy,
            max_grad_norm,
        });
        if step == cfg.steps {
            break;
        }
        if cfg.early_stop {
            if let Some(prev) = previous {
                if prev - energy <= cfg.tolerance * prev.abs() {
                    break;
                }
            }
        }
        previous = Some(energy);
        if interior.is_empty() {
            continue;
        }

        let update = opt.step(interior);
        if cfg.backtracking {
            let mut scale = 1.0;
            for _ in 0..=MAX_HALVINGS {
                let mut candidate = path.clone();
                apply(&mut candidate, &update, scale);
                if path_energy(&candidate, pack)? <= energy {
                    path = candidate;
                    break;
                }
                scale *= 0.5;
            }
        } else {
            apply(&mut path, &update, 1.0);
        }
    }
    Ok(GeodesicSolve { path, trace })
}

fn apply(path: &mut LatentPath, update: &[Vector], scale: f64) {
    for (p, u) in path.points_mut()[1..].iter_mut().zip(update) {
        *p -= u * scale;
    }
}
