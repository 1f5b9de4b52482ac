//! Closed-form maps with known geometry, used as ground truth.

use super::{matrix_to_row_major, DiffMap, MapSpec};
use crate::error::{Error, Result};
use crate::{Matrix, Vector};

#[derive(Debug, Clone)]
pub struct Identity {
    dim: usize,
}

impl Identity {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMap("identity needs a positive dimension".into()));
        }
        Ok(Self { dim })
    }
}

impl DiffMap for Identity {
    fn in_dim(&self) -> usize {
        self.dim
    }
    fn out_dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &Vector) -> Vector {
        x.clone()
    }
    fn push_forward(&self, _x: &Vector, v: &Vector) -> Vector {
        v.clone()
    }
    fn pull_back(&self, _x: &Vector, u: &Vector) -> Vector {
        u.clone()
    }
    fn spec(&self) -> MapSpec {
        MapSpec::Identity { dim: self.dim }
    }
}

/// `x ↦ A x + b`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    a: Matrix,
    b: Vector,
}

impl LinearMap {
    pub fn new(a: Matrix, b: Vector) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidMap("linear map needs positive dimensions".into()));
        }
        if b.len() != a.nrows() {
            return Err(Error::InvalidMap(format!(
                "bias length {} does not match {} output rows",
                b.len(),
                a.nrows()
            )));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidMap("non-finite linear weights".into()));
        }
        Ok(Self { a, b })
    }

    pub fn without_bias(a: Matrix) -> Result<Self> {
        let b = Vector::zeros(a.nrows());
        Self::new(a, b)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }
}

impl DiffMap for LinearMap {
    fn in_dim(&self) -> usize {
        self.a.ncols()
    }
    fn out_dim(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, x: &Vector) -> Vector {
        &self.a * x + &self.b
    }
    fn push_forward(&self, _x: &Vector, v: &Vector) -> Vector {
        &self.a * v
    }
    fn pull_back(&self, _x: &Vector, u: &Vector) -> Vector {
        self.a.tr_mul(u)
    }
    fn spec(&self) -> MapSpec {
        MapSpec::Linear {
            dims: [self.a.ncols(), self.a.nrows()],
            a: matrix_to_row_major(&self.a),
            b: self.b.iter().copied().collect(),
        }
    }
}

/// Polar parametrization of the unit sphere,
/// `(θ, φ) ↦ (sinθ cosφ, sinθ sinφ, cosθ)`. Its Euclidean pullback is
/// `diag(1, sin²θ)`.
#[derive(Debug, Clone, Copy)]
pub struct SphereImmersion;

impl DiffMap for SphereImmersion {
    fn in_dim(&self) -> usize {
        2
    }
    fn out_dim(&self) -> usize {
        3
    }
    fn eval(&self, x: &Vector) -> Vector {
        let (st, ct) = x[0].sin_cos();
        let (sp, cp) = x[1].sin_cos();
        Vector::from_vec(vec![st * cp, st * sp, ct])
    }
    fn push_forward(&self, x: &Vector, v: &Vector) -> Vector {
        let (st, ct) = x[0].sin_cos();
        let (sp, cp) = x[1].sin_cos();
        Vector::from_vec(vec![
            ct * cp * v[0] - st * sp * v[1],
            ct * sp * v[0] + st * cp * v[1],
            -st * v[0],
        ])
    }
    fn pull_back(&self, x: &Vector, u: &Vector) -> Vector {
        let (st, ct) = x[0].sin_cos();
        let (sp, cp) = x[1].sin_cos();
        Vector::from_vec(vec![
            ct * cp * u[0] + ct * sp * u[1] - st * u[2],
            -st * sp * u[0] + st * cp * u[1],
        ])
    }
    fn spec(&self) -> MapSpec {
        MapSpec::SphereImmersion
    }
}

/// `(u, v) ↦ (u, v, u² − v²)`.
#[derive(Debug, Clone, Copy)]
pub struct Saddle;

impl DiffMap for Saddle {
    fn in_dim(&self) -> usize {
        2
    }
    fn out_dim(&self) -> usize {
        3
    }
    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[0], x[1], x[0] * x[0] - x[1] * x[1]])
    }
    fn push_forward(&self, x: &Vector, v: &Vector) -> Vector {
        Vector::from_vec(vec![v[0], v[1], 2.0 * x[0] * v[0] - 2.0 * x[1] * v[1]])
    }
    fn pull_back(&self, x: &Vector, u: &Vector) -> Vector {
        Vector::from_vec(vec![u[0] + 2.0 * x[0] * u[2], u[1] - 2.0 * x[1] * u[2]])
    }
    fn spec(&self) -> MapSpec {
        MapSpec::Saddle
    }
}
