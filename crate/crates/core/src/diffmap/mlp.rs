//! Fixed-weight multilayer perceptrons with smooth activations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{matrix_to_row_major, DiffMap, MapSpec};
use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Activation {
    /// `ln(1 + exp(β a)) / β`
    Softplus { beta: f64 },
    Tanh,
    /// `sin(ω a)`
    Sine { omega: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Softplus { beta: 1.0 }
    }
}

impl Activation {
    fn validate(&self) -> Result<()> {
        match *self {
            Activation::Softplus { beta } if !(beta > 0.0 && beta.is_finite()) => Err(
                Error::InvalidMap(format!("softplus sharpness must be positive, got {beta}")),
            ),
            Activation::Sine { omega } if !omega.is_finite() => {
                Err(Error::InvalidMap("sine frequency must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    fn apply(&self, a: f64) -> f64 {
        match *self {
            Activation::Softplus { beta } => {
                let t = beta * a;
                (t.max(0.0) + (-t.abs()).exp().ln_1p()) / beta
            }
            Activation::Tanh => a.tanh(),
            Activation::Sine { omega } => (omega * a).sin(),
        }
    }

    #[inline]
    fn derivative(&self, a: f64) -> f64 {
        match *self {
            Activation::Softplus { beta } => {
                let t = beta * a;
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
            Activation::Tanh => {
                let th = a.tanh();
                1.0 - th * th
            }
            Activation::Sine { omega } => omega * (omega * a).cos(),
        }
    }
}

/// Row-major weights and bias of one affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Layer {
    w: Matrix,
    b: Vector,
}

#[derive(Debug, Clone)]
pub struct MlpMap {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
    seed: Option<u64>,
}

impl MlpMap {
    /// Weights and biases i.i.d. uniform(−1/√fan_in, 1/√fan_in), drawn
    /// layer by layer, weights row-major before biases.
    pub fn seeded(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w: Vec<f64> = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                let b: Vec<f64> = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
                LayerWeights { w, b }
            })
            .collect::<Vec<_>>();
        Self::from_weights(dims, &layers, activation, Some(seed))
    }

    pub fn from_weights(
        dims: &[usize],
        weights: &[LayerWeights],
        activation: Activation,
        seed: Option<u64>,
    ) -> Result<Self> {
        check_dims(dims)?;
        activation.validate()?;
        if weights.len() != dims.len() - 1 {
            return Err(Error::InvalidMap(format!(
                "{} layer dims need {} weight blocks, got {}",
                dims.len(),
                dims.len() - 1,
                weights.len()
            )));
        }
        let mut layers = Vec::with_capacity(weights.len());
        for (pair, lw) in dims.windows(2).zip(weights) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            if lw.w.len() != fan_in * fan_out || lw.b.len() != fan_out {
                return Err(Error::InvalidMap(format!(
                    "layer {fan_in}->{fan_out} has {} weights and {} biases",
                    lw.w.len(),
                    lw.b.len()
                )));
            }
            if !lw.w.iter().chain(&lw.b).all(|v| v.is_finite()) {
                return Err(Error::InvalidMap("non-finite layer weights".into()));
            }
            layers.push(Layer {
                w: Matrix::from_row_slice(fan_out, fan_in, &lw.w),
                b: Vector::from_column_slice(&lw.b),
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            activation,
            seed,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layer_weights(&self) -> Vec<LayerWeights> {
        self.layers
            .iter()
            .map(|l| LayerWeights {
                w: matrix_to_row_major(&l.w),
                b: l.b.iter().copied().collect(),
            })
            .collect()
    }

    /// Pre-activations of every hidden layer, and the output.
    fn forward_trace(&self, x: &Vector) -> (Vec<Vector>, Vector) {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let a = &layer.w * &h + &layer.b;
            if i == last {
                return (pre, a);
            }
            h = a.map(|v| self.activation.apply(v));
            pre.push(a);
        }
        unreachable!("an mlp has at least one layer")
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidMap(format!(
            "mlp needs at least two positive layer widths, got {dims:?}"
        )));
    }
    Ok(())
}

impl DiffMap for MlpMap {
    fn in_dim(&self) -> usize {
        self.dims[0]
    }

    fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn eval(&self, x: &Vector) -> Vector {
        self.forward_trace(x).1
    }

    fn push_forward(&self, x: &Vector, v: &Vector) -> Vector {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        let mut t = v.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let a = &layer.w * &h + &layer.b;
            let ta = &layer.w * &t;
            if i == last {
                return ta;
            }
            t = ta.zip_map(&a, |tv, av| self.activation.derivative(av) * tv);
            h = a.map(|v| self.activation.apply(v));
        }
        unreachable!("an mlp has at least one layer")
    }

    fn pull_back(&self, x: &Vector, u: &Vector) -> Vector {
        let (pre, _) = self.forward_trace(x);
        let mut g = u.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.w.tr_mul(&g);
            if i > 0 {
                let a = &pre[i - 1];
                g = g.zip_map(a, |gv, av| self.activation.derivative(av) * gv);
            }
        }
        g
    }

    fn spec(&self) -> MapSpec {
        MapSpec::Mlp {
            dims: self.dims.clone(),
            activation: self.activation,
            seed: self.seed,
            weights: Some(self.layer_weights()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;

    /// Scalar re-evaluation of the forward pass straight from the row-major
    /// weight arrays.
    fn scalar_forward(dims: &[usize], weights: &[LayerWeights], x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (li, (pair, lw)) in dims.windows(2).zip(weights).enumerate() {
            let (n_in, n_out) = (pair[0], pair[1]);
            let mut next = vec![0.0; n_out];
            for r in 0..n_out {
                let mut acc = lw.b[r];
                for c in 0..n_in {
                    acc += lw.w[r * n_in + c] * h[c];
                }
                next[r] = if li + 1 < weights.len() {
                    (1.0 + acc.exp()).ln()
                } else {
                    acc
                };
            }
            h = next;
        }
        h
    }

    #[test]
    fn seeded_forward_matches_scalar_reimplementation() {
        let dims = [2, 5, 3];
        let mlp = MlpMap::seeded(&dims, Activation::Softplus { beta: 1.0 }, 42).unwrap();
        let x = [0.5, -0.3];
        let expected = scalar_forward(&dims, &mlp.layer_weights(), &x);
        let got = mlp.value(&Vector::from_row_slice(&x)).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-14, "{g} vs {e}");
        }
    }

    #[test]
    fn seeded_weights_respect_fan_in_bound() {
        let mlp = MlpMap::seeded(&[16, 4, 2], Activation::Tanh, 5).unwrap();
        for (lw, fan_in) in mlp.layer_weights().iter().zip([16.0f64, 4.0]) {
            let bound = 1.0 / fan_in.sqrt();
            assert!(lw.w.iter().chain(&lw.b).all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn seeded_is_deterministic() {
        let a = MlpMap::seeded(&[3, 4, 2], Activation::default(), 9).unwrap();
        let b = MlpMap::seeded(&[3, 4, 2], Activation::default(), 9).unwrap();
        let c = MlpMap::seeded(&[3, 4, 2], Activation::default(), 10).unwrap();
        assert_eq!(a.layer_weights(), b.layer_weights());
        assert_ne!(a.layer_weights(), c.layer_weights());
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(MlpMap::seeded(&[3], Activation::Tanh, 0).is_err());
        assert!(MlpMap::seeded(&[3, 0, 1], Activation::Tanh, 0).is_err());
        assert!(MlpMap::seeded(&[3, 2], Activation::Softplus { beta: 0.0 }, 0).is_err());
        assert!(MlpMap::seeded(&[3, 2], Activation::Softplus { beta: -1.0 }, 0).is_err());
        let bad = vec![LayerWeights { w: vec![0.0; 5], b: vec![0.0; 2] }];
        assert!(MlpMap::from_weights(&[3, 2], &bad, Activation::Tanh, None).is_err());
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let act = Activation::Softplus { beta: 2.0 };
        assert!((act.apply(400.0) - 400.0).abs() < 1e-12);
        assert!(act.apply(-400.0) >= 0.0 && act.apply(-400.0) < 1e-300);
        assert!((act.derivative(400.0) - 1.0).abs() < 1e-15);
        assert!((act.apply(0.0) - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_jacobian_is_continuous() {
        let mlp = MlpMap::seeded(&[2, 8, 3], Activation::Softplus { beta: 1.0 }, 17).unwrap();
        let x = Vector::from_vec(vec![0.2, -0.7]);
        let dir = Vector::from_vec(vec![0.6, 0.8]);
        let j0 = mlp.jacobian(&x).unwrap();
        let diffs: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|d| max_abs(&(mlp.jacobian(&(&x + &dir * *d)).unwrap() - &j0)))
            .collect();
        assert!(diffs[0] > diffs[1] && diffs[1] > diffs[2], "{diffs:?}");
    }

    #[test]
    fn sine_layers_match_finite_differences() {
        let mlp = MlpMap::seeded(&[4, 6, 2], Activation::Sine { omega: 25.0 }, 3).unwrap();
        let x = Vector::from_vec(vec![0.1, 0.2, -0.3, 0.05]);
        let fd = central_difference_jacobian(&mlp, &x, 1e-6);
        let err = max_abs(&(mlp.jacobian(&x).unwrap() - fd));
        assert!(err < 1e-4, "{err}");
    }
}
