use std::sync::Arc;

use super::{DiffMap, MapRef, MapSpec};
use crate::error::{Error, Result};
use crate::Vector;

/// `outer ∘ inner`.
#[derive(Debug, Clone)]
pub struct Composed {
    outer: MapRef,
    inner: MapRef,
}

impl Composed {
    pub fn outer(&self) -> &MapRef {
        &self.outer
    }
    pub fn inner(&self) -> &MapRef {
        &self.inner
    }
}

pub fn compose(outer: MapRef, inner: MapRef) -> Result<MapRef> {
    if inner.out_dim() != outer.in_dim() {
        return Err(Error::Dimension(format!(
            "cannot compose: inner map outputs {} values, outer expects {}",
            inner.out_dim(),
            outer.in_dim()
        )));
    }
    Ok(Arc::new(Composed { outer, inner }))
}

impl DiffMap for Composed {
    fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.outer.out_dim()
    }
    fn eval(&self, x: &Vector) -> Vector {
        self.outer.eval(&self.inner.eval(x))
    }
    fn push_forward(&self, x: &Vector, v: &Vector) -> Vector {
        let y = self.inner.eval(x);
        self.outer.push_forward(&y, &self.inner.push_forward(x, v))
    }
    fn pull_back(&self, x: &Vector, u: &Vector) -> Vector {
        let y = self.inner.eval(x);
        self.inner.pull_back(x, &self.outer.pull_back(&y, u))
    }
    fn spec(&self) -> MapSpec {
        MapSpec::Compose {
            outer: Box::new(self.outer.spec()),
            inner: Box::new(self.inner.spec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::super::{Activation, Identity, LinearMap, MlpMap, SphereImmersion};
    use super::*;
    use crate::Matrix;

    #[test]
    fn identity_composition_is_transparent() {
        let m: MapRef = Arc::new(MlpMap::seeded(&[2, 4, 3], Activation::default(), 1).unwrap());
        let c = compose(Arc::new(Identity::new(3).unwrap()), m.clone()).unwrap();
        let x = Vector::from_vec(vec![0.4, -1.1]);
        assert_eq!(c.value(&x).unwrap(), m.value(&x).unwrap());
        assert_eq!(c.jacobian(&x).unwrap(), m.jacobian(&x).unwrap());
    }

    #[test]
    fn linear_chain_rule() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let b = Matrix::from_row_slice(3, 2, &[0.5, 1.0, -2.0, 0.0, 1.5, 1.0]);
        let c = compose(
            Arc::new(LinearMap::without_bias(a.clone()).unwrap()),
            Arc::new(LinearMap::without_bias(b.clone()).unwrap()),
        )
        .unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0]] {
            let jac = c.jacobian(&Vector::from_row_slice(&x)).unwrap();
            assert!((jac - &a * &b).abs().max() < 1e-14);
        }
    }

    #[test]
    fn chain_rule_against_factor_jacobians() {
        let mlp: MapRef = Arc::new(MlpMap::seeded(&[3, 6, 4], Activation::default(), 2).unwrap());
        let sphere: MapRef = Arc::new(SphereImmersion);
        let c = compose(mlp.clone(), sphere.clone()).unwrap();
        for i in 0..20 {
            let z = Vector::from_vec(vec![0.1 * i as f64, 0.4 - 0.07 * i as f64]);
            let lhs = c.jacobian(&z).unwrap();
            let rhs = mlp.jacobian(&sphere.eval(&z)).unwrap() * sphere.jacobian(&z).unwrap();
            let scale = max_abs(&rhs).max(1.0);
            assert!(max_abs(&(lhs - rhs)) <= 1e-10 * scale);
            let fd = central_difference_jacobian(c.as_ref(), &z, 1e-5);
            assert!(max_abs(&(c.jacobian(&z).unwrap() - fd)) < 1e-4);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let r = compose(Arc::new(Identity::new(2).unwrap()), Arc::new(SphereImmersion));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
