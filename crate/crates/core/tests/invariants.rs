//! Randomized checks of the structural invariants of maps, metrics, paths,
//! solvers and scores.

mod common;

use std::sync::Arc;

use pcgeo::counterfactual::{cg_solve, natural_gradient_direction, Phase2Config};
use pcgeo::diffmap::{compose, MapRef};
use pcgeo::evaluation::{frechet_distance, induced_distance, semantic_margin, EmbeddedSet, EmbedderRole, EvalEmbedder};
use pcgeo::geometry::{path_energy, path_length, quadratic_energy, AmbientMetric, EndpointPolicy, LatentPath, MetricPack};
use pcgeo::paths::{densify_midpoints, phase1_geodesic, Phase1Config};
use pcgeo::{Matrix, Vector};
use proptest::prelude::*;
use rand::Rng;

use common::{composite_pack, mlp, random_spd, random_vector, rng, tanh_mlp};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn random_path(seed: u64, d: usize, t: usize) -> LatentPath {
    let mut r = rng(seed);
    LatentPath::new((0..=t).map(|_| random_vector(&mut r, d, 1.5)).collect(), EndpointPolicy::BothFixed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jvp_vjp_duality(seed in 0u64..10_000) {
        let f = mlp(&[3, 7, 5], seed);
        let mut r = rng(seed);
        let x = random_vector(&mut r, 3, 2.0);
        let u = random_vector(&mut r, 3, 1.0);
        let v = random_vector(&mut r, 5, 1.0);
        let lhs = v.dot(&f.jvp(&x, &u).unwrap());
        let rhs = f.vjp(&x, &v).unwrap().dot(&u);
        prop_assert!(rel_close(lhs, rhs, 1e-10), "{lhs} vs {rhs}");
    }

    #[test]
    fn composition_obeys_the_chain_rule(seed in 0u64..10_000) {
        let g = mlp(&[2, 6, 4], seed);
        let f = tanh_mlp(&[4, 5, 3], seed + 1);
        let fg = compose(f.clone(), g.clone()).unwrap();
        let x = random_vector(&mut rng(seed), 2, 2.0);
        let lhs = fg.jacobian(&x).unwrap();
        let rhs = f.jacobian(&g.value(&x).unwrap()).unwrap() * g.jacobian(&x).unwrap();
        let scale = rhs.amax().max(1.0);
        prop_assert!((lhs - rhs).amax() <= 1e-10 * scale);
    }

    #[test]
    fn length_squared_is_bounded_by_twice_the_energy(seed in 0u64..10_000, t in 1usize..12) {
        let (pack, _) = composite_pack(2, 5, seed);
        let path = random_path(seed, 2, t);
        let l = path_length(&path, &pack).unwrap();
        let e = quadratic_energy(&path, &pack).unwrap();
        prop_assert!(l * l <= 2.0 * e * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn reversal_preserves_length(seed in 0u64..10_000, t in 1usize..12) {
        // Left-point evaluation makes reversal exact only for a constant
        // metric; a linear generator provides one.
        let path = random_path(seed, 2, t);
        let flat = MetricPack::euclidean(Arc::new(pcgeo::diffmap::LinearMap::without_bias(
            Matrix::from_fn(4, 2, |i, j| ((i + 2 * j + 1) as f64).sin())).unwrap()));
        let a = path_length(&path, &flat).unwrap();
        let b = path_length(&path.reversed(), &flat).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn pullback_metric_is_exactly_symmetric(seed in 0u64..10_000) {
        let (pack, _) = composite_pack(3, 5, seed);
        let z = random_vector(&mut rng(seed), 3, 2.0);
        let g = pack.metric_at(&z).unwrap().tensor;
        prop_assert_eq!(&g, &g.transpose());
    }

    #[test]
    fn composite_energy_is_the_weighted_sum_of_feature_energies(seed in 0u64..10_000, t in 1usize..8) {
        let (pack, feats) = composite_pack(2, 5, seed);
        let path = random_path(seed, 2, t);
        let total = path_energy(&path, &pack).unwrap();
        let parts: f64 = feats
            .iter()
            .map(|h| {
                let hg = compose(h.clone(), pack.generator().clone()).unwrap();
                path_energy(&path, &MetricPack::euclidean(hg)).unwrap() / h.out_dim() as f64
            })
            .sum();
        prop_assert!(rel_close(total, parts, 1e-9), "{total} vs {parts}");
    }

    #[test]
    fn phase1_pins_both_endpoints_bitwise(seed in 0u64..10_000, steps in 1usize..30) {
        let (pack, _) = composite_pack(2, 5, seed);
        let path = random_path(seed, 2, 6);
        let cfg = Phase1Config { steps, learning_rate: 1e-2, ..Default::default() };
        let out = phase1_geodesic(&path, &pack, &cfg).unwrap().path;
        prop_assert_eq!(out.start().as_slice(), path.start().as_slice());
        prop_assert_eq!(out.end().as_slice(), path.end().as_slice());
    }

    #[test]
    fn densification_restores_the_point_count(seed in 0u64..10_000, t in 1usize..16, pick in 0usize..1000) {
        let path = random_path(seed, 3, t);
        let idx = 1 + pick % t;
        let out = densify_midpoints(&path, idx).unwrap();
        prop_assert_eq!(out.points().len(), t + 1);
        prop_assert_eq!(out.start().as_slice(), path.start().as_slice());
        prop_assert_eq!(out.end().as_slice(), path.points()[idx].as_slice());
    }

    #[test]
    fn lambda_schedule_is_geometric(l0 in 1e-6f64..1.0, factor in 1.0f64..10.0, period in 1usize..100, step in 1usize..1000) {
        let cfg = Phase2Config { lambda0: l0, lambda_factor: factor, lambda_period: period, ..Default::default() };
        prop_assert_eq!(cfg.lambda_at(step), l0 * factor.powi((step / period) as i32));
    }

    #[test]
    fn induced_distance_under_a_gram_is_a_factor_norm(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let a = Matrix::from_fn(4, 6, |_, _| r.gen_range(-1.0..1.0));
        let x0 = random_vector(&mut r, 6, 1.0);
        let xt = random_vector(&mut r, 6, 1.0);
        let d = induced_distance(&x0, &xt, &(a.transpose() * &a)).unwrap();
        let expect = (&a * (&xt - &x0)).norm();
        prop_assert!((d - expect).abs() <= 1e-10 * expect.max(1.0));
    }

    #[test]
    fn frechet_is_symmetric_and_zero_on_the_diagonal(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let c1 = random_spd(&mut r, 4);
        let c2 = random_spd(&mut r, 4);
        let m1 = random_vector(&mut r, 4, 1.0);
        let m2 = random_vector(&mut r, 4, 1.0);
        let ab = frechet_distance(&m1, &c1, &m2, &c2).unwrap();
        let ba = frechet_distance(&m2, &c2, &m1, &c1).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0));
        prop_assert!(frechet_distance(&m1, &c1, &m1, &c1).unwrap().abs() <= 1e-8);
    }

    #[test]
    fn semantic_margin_is_antisymmetric_under_label_swap(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let features: Vec<Vector> = (0..24).map(|_| random_vector(&mut r, 3, 2.0)).collect();
        let labels: Vec<usize> = (0..24).map(|i| i % 2).collect();
        let swapped: Vec<usize> = labels.iter().map(|l| 1 - l).collect();
        let emb = EvalEmbedder::new(Arc::new(pcgeo::diffmap::Identity::new(3).unwrap()), EmbedderRole::RobustEval);
        let x = random_vector(&mut r, 3, 2.0);
        let a = semantic_margin(&x, &EmbeddedSet { features: features.clone(), labels }, &emb, 1, 4).unwrap();
        let b = semantic_margin(&x, &EmbeddedSet { features, labels: swapped }, &emb, 1, 4).unwrap();
        prop_assert_eq!(a, -b);
    }

    #[test]
    fn natural_gradient_is_a_descent_direction(seed in 0u64..10_000) {
        let (pack, _) = composite_pack(3, 6, seed);
        let mut r = rng(seed);
        let z = random_vector(&mut r, 3, 1.5);
        let grad = random_vector(&mut r, 3, 1.0);
        let dir = natural_gradient_direction(&pack, &z, &grad, 1e-10, 50).unwrap();
        prop_assert!(grad.dot(&dir) > 0.0);
    }

    #[test]
    fn cg_matches_dense_solves(seed in 0u64..10_000, n in 1usize..10) {
        let mut r = rng(seed);
        let a = random_spd(&mut r, n);
        let b = random_vector(&mut r, n, 1.0);
        let out = cg_solve(|v| &a * v, &b, 1e-12, 10 * n).unwrap();
        let dense = a.clone().cholesky().unwrap().solve(&b);
        prop_assert!((out.solution - dense).amax() <= 1e-6);
    }
}

#[test]
fn composite_metric_weights_default_to_inverse_dimension() {
    let h1: MapRef = mlp(&[3, 4, 4], 1);
    let h2: MapRef = mlp(&[3, 4, 2], 2);
    let m = AmbientMetric::composite_default(vec![h1, h2]).unwrap();
    let w: Vec<f64> = m.features().iter().map(|f| f.weight).collect();
    assert_eq!(w, vec![0.25, 0.5]);
}
