//! Smooth maps between finite-dimensional real spaces.
//!
//! Every generator, feature map and classifier in the crate is a [`DiffMap`]:
//! it exposes its value, Jacobian–vector products (forward mode),
//! vector–Jacobian products (reverse mode) and a dense Jacobian assembled
//! column by column from the forward-mode product. Maps are immutable after
//! construction and serialize to a [`MapSpec`] JSON document.

mod analytic;
mod compose;
mod mlp;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use analytic::{Identity, LinearMap, Saddle, SphereImmersion};
pub use compose::{compose, Composed};
pub use mlp::{Activation, LayerWeights, MlpMap};

use crate::error::{check_finite, check_len, Error, Result};
use crate::{Matrix, Vector};

/// Shared handle to a map. Identity of the handle (`Arc::ptr_eq`) is what
/// distinguishes evaluation embedders from optimization-time maps.
pub type MapRef = Arc<dyn DiffMap>;

pub trait DiffMap: Send + Sync + fmt::Debug {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;

    /// Value without input validation.
    fn eval(&self, x: &Vector) -> Vector;

    /// `J(x) v` without input validation.
    fn push_forward(&self, x: &Vector, v: &Vector) -> Vector;

    /// `J(x)ᵀ u` without input validation.
    fn pull_back(&self, x: &Vector, u: &Vector) -> Vector;

    fn spec(&self) -> MapSpec;

    fn value(&self, x: &Vector) -> Result<Vector> {
        self.check_point(x)?;
        Ok(self.eval(x))
    }

    fn jvp(&self, x: &Vector, v: &Vector) -> Result<Vector> {
        self.check_point(x)?;
        check_len(self.in_dim(), v.len())?;
        check_finite(v.as_slice(), "tangent vector")?;
        Ok(self.push_forward(x, v))
    }

    fn vjp(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_point(x)?;
        check_len(self.out_dim(), u.len())?;
        check_finite(u.as_slice(), "cotangent vector")?;
        Ok(self.pull_back(x, u))
    }

    /// Dense `out_dim × in_dim` Jacobian; column `j` is `push_forward(x, e_j)`.
    fn jacobian(&self, x: &Vector) -> Result<Matrix> {
        self.check_point(x)?;
        Ok(self.jacobian_unchecked(x))
    }

    fn jacobian_unchecked(&self, x: &Vector) -> Matrix {
        let n = self.in_dim();
        let mut jac = Matrix::zeros(self.out_dim(), n);
        let mut e = Vector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            jac.set_column(j, &self.push_forward(x, &e));
            e[j] = 0.0;
        }
        jac
    }

    fn check_point(&self, x: &Vector) -> Result<()> {
        check_len(self.in_dim(), x.len())?;
        check_finite(x.as_slice(), "map input")
    }
}

/// Serializable description of a map.
///
/// Matrices are stored row-major. An `mlp` entry carries either a seed (the
/// weights are then drawn uniform(−1/√fan_in, 1/√fan_in) from a ChaCha8
/// stream) or explicit weights; explicit weights win when both are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapSpec {
    Identity {
        dim: usize,
    },
    Linear {
        /// `[in_dim, out_dim]`
        dims: [usize; 2],
        a: Vec<f64>,
        b: Vec<f64>,
    },
    SphereImmersion,
    Saddle,
    Mlp {
        dims: Vec<usize>,
        activation: Activation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<LayerWeights>>,
    },
    Compose {
        outer: Box<MapSpec>,
        inner: Box<MapSpec>,
    },
}

impl MapSpec {
    pub fn build(&self) -> Result<MapRef> {
        Ok(match self {
            MapSpec::Identity { dim } => Arc::new(Identity::new(*dim)?),
            MapSpec::Linear { dims, a, b } => {
                let [n_in, n_out] = *dims;
                if a.len() != n_in * n_out || b.len() != n_out {
                    return Err(Error::InvalidMap(format!(
                        "linear map {n_in}->{n_out} needs {} weights and {n_out} biases",
                        n_in * n_out
                    )));
                }
                Arc::new(LinearMap::new(
                    Matrix::from_row_slice(n_out, n_in, a),
                    Vector::from_column_slice(b),
                )?)
            }
            MapSpec::SphereImmersion => Arc::new(SphereImmersion),
            MapSpec::Saddle => Arc::new(Saddle),
            MapSpec::Mlp {
                dims,
                activation,
                seed,
                weights,
            } => match (weights, seed) {
                (Some(w), seed) => Arc::new(MlpMap::from_weights(dims, w, *activation, *seed)?),
                (None, Some(seed)) => Arc::new(MlpMap::seeded(dims, *activation, *seed)?),
                (None, None) => {
                    return Err(Error::InvalidMap(
                        "mlp spec needs a seed or explicit weights".into(),
                    ))
                }
            },
            MapSpec::Compose { outer, inner } => compose(outer.build()?, inner.build()?)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) fn matrix_to_row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}
