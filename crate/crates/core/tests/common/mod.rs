#![allow(dead_code)]

use std::sync::Arc;

use pcgeo::counterfactual::{ClassifierHead, CounterfactualProblem};
use pcgeo::diffmap::{Activation, LinearMap, MapRef, MlpMap};
use pcgeo::geometry::{AmbientMetric, MetricPack};
use pcgeo::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

pub fn mlp(dims: &[usize], seed: u64) -> MapRef {
    Arc::new(MlpMap::seeded(dims, Activation::default(), seed).unwrap())
}

pub fn tanh_mlp(dims: &[usize], seed: u64) -> MapRef {
    Arc::new(MlpMap::seeded(dims, Activation::Tanh, seed).unwrap())
}

/// Softplus generator `d → n` with two softplus/tanh feature maps on top.
pub fn composite_pack(d: usize, n: usize, seed: u64) -> (MetricPack, Vec<MapRef>) {
    let g = mlp(&[d, 8, n], seed);
    let h1 = mlp(&[n, 6, 4], seed + 1);
    let h2 = tanh_mlp(&[n, 5, 3], seed + 2);
    let pack = MetricPack::new(g, AmbientMetric::composite_default(vec![h1.clone(), h2.clone()]).unwrap()).unwrap();
    (pack, vec![h1, h2])
}

/// Random SPD matrix `AᵀA + δI`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    a.transpose() * &a + Matrix::identity(n, n) * 0.1
}

/// Softplus generator `d → 6` with random linear two-class logits.
pub fn mlp_problem(d: usize, seed: u64) -> CounterfactualProblem {
    let mut r = rng(seed);
    let g = mlp(&[d, 8, 6], seed + 7);
    let w = Matrix::from_fn(2, 6, |_, _| r.gen_range(-2.0..2.0));
    let logits: MapRef = Arc::new(LinearMap::new(w, Vector::zeros(2)).unwrap());
    let head = ClassifierHead::new(logits, 1).unwrap();
    let z0 = random_vector(&mut r, d, 1.0);
    CounterfactualProblem::new(z0.clone(), z0, head, MetricPack::euclidean(g)).unwrap()
}
