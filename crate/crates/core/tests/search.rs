use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sublsvi::adaptive::{quantize_query, QuantizationSpec};
use sublsvi::linalg::{dot, norm};
use sublsvi::lsh::{derive_table_params, hyperplane_collision_probability, AnnIndex, LshConfig, SphericalPoint};
use sublsvi::matnorm::{lift_data, mat_norm, PsdQuery};
use sublsvi::maxip::{
    brute_force_maxip, transform_data_point, transform_query, MaxIpIndex, MaxIpParams, Outcome, ProbePolicy,
};

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// A unit vector at Euclidean distance exactly `dist` from unit `p`.
fn at_distance(rng: &mut ChaCha8Rng, p: &[f64], dist: f64) -> Vec<f64> {
    let g = unit(rng, p.len());
    let along = dot(&g, p);
    let orth: Vec<f64> = g.iter().zip(p).map(|(a, b)| a - along * b).collect();
    let o = norm(&orth);
    let cos = 1.0 - dist * dist / 2.0;
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    p.iter().zip(&orth).map(|(a, b)| cos * a + sin * b / o).collect()
}

#[test]
fn collision_probability_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 12;
    for dist in [0.3, 0.8, 1.2, 1.6] {
        let trials = 20_000;
        let mut hits = 0;
        for _ in 0..trials {
            let p = unit(&mut rng, d);
            let q = at_distance(&mut rng, &p, dist);
            let plane = unit(&mut rng, d);
            if (dot(&plane, &p) >= 0.0) == (dot(&plane, &q) >= 0.0) {
                hits += 1;
            }
        }
        let est = hits as f64 / trials as f64;
        let expected = hyperplane_collision_probability(dist);
        let sd = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!((est - expected).abs() < 5.0 * sd, "dist {dist}: {est} vs {expected}");
    }
}

#[test]
fn ann_recall_with_derived_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, d, r, cbar) = (400, 10, 0.7, 1.8);
    let data: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, d)).collect();
    let points = SphericalPoint::from_rows(&data).unwrap();
    let config = derive_table_params(n, cbar, r, 99).unwrap();
    let idx = AnnIndex::build(&points, cbar, r, config).unwrap();
    let queries = 300;
    let mut ok = 0;
    for i in 0..queries {
        let target = &data[i % n];
        let dist = r * rng.random_range(0.5..1.0);
        let q = SphericalPoint::new(at_distance(&mut rng, target, dist)).unwrap();
        let (found, _) = idx.query(&q).unwrap();
        if let Some((id, dist)) = found {
            let actual = data[id].iter().zip(q.coords()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((actual - dist).abs() < 1e-9);
            assert!(dist <= cbar * r + 1e-9);
            ok += 1;
        }
    }
    assert!(ok as f64 / queries as f64 >= 0.9, "recall {ok}/{queries}");
}

#[test]
fn first_hit_meets_threshold_and_best_of_union_dominates() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d, c, tau) = (2000, 16, 0.7, 0.5);
    let ys: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, d)).collect();
    let idx = MaxIpIndex::build(&ys, MaxIpParams::new(c, tau, 1.0).unwrap(), LshConfig::new(8, 64, 1, 4).unwrap()).unwrap();
    for _ in 0..200 {
        let x = unit(&mut rng, d);
        let (_, opt) = brute_force_maxip(&x, &ys).unwrap();
        let first = idx.query_with(&x, ProbePolicy::FirstHit).unwrap();
        let best = idx.query_with(&x, ProbePolicy::BestOfUnion).unwrap();
        if let Outcome::Candidate { inner_product, .. } = first.outcome {
            assert!(inner_product >= c * tau - 1e-12);
            let b = best.outcome.candidate().expect("union contains the first hit").1;
            assert!(b >= inner_product - 1e-12 && b <= opt + 1e-12);
            assert!(first.probe_stats.candidates <= best.probe_stats.candidates);
        }
    }
}

fn vec_in_ball(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, d).prop_map(|v| {
        let n = norm(&v);
        if n > 1.0 {
            v.into_iter().map(|x| x / n).collect()
        } else {
            v
        }
    })
}

proptest! {
    #[test]
    fn transforms_are_unit_and_scale_inner_products(
        y in vec_in_ball(6),
        x in vec_in_ball(6),
        d_x in 0.1..10.0f64,
    ) {
        let x: Vec<f64> = x.into_iter().map(|v| v * d_x).collect();
        let p = transform_data_point(&y).unwrap();
        let q = transform_query(&x, d_x).unwrap();
        prop_assert!((norm(p.coords()) - 1.0).abs() < 1e-9);
        prop_assert!((norm(q.coords()) - 1.0).abs() < 1e-9);
        prop_assert!((dot(p.coords(), q.coords()) - 0.8 * dot(&x, &y) / d_x).abs() < 1e-9);
    }

    #[test]
    fn quantization_error_is_at_most_half_a_cell(
        q in prop::collection::vec(-3.0..3.0f64, 1..12),
        lambda in 0.001..0.9f64,
    ) {
        let spec = QuantizationSpec::new(lambda, q.len(), 3.0, 0.1).unwrap();
        let snapped = quantize_query(&q, &spec);
        for (a, b) in q.iter().zip(&snapped) {
            prop_assert!((a - b).abs() <= spec.cell / 2.0 + 1e-12);
            let steps = b / spec.cell;
            prop_assert!((steps - steps.round()).abs() < 1e-6);
        }
        let diff: Vec<f64> = q.iter().zip(&snapped).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&diff) <= lambda / (2.0 * (q.len() as f64).sqrt()) + 1e-12);
    }

    #[test]
    fn lift_identity(y in vec_in_ball(4), entries in prop::collection::vec(-2.0..2.0f64, 12)) {
        let a = DMatrix::from_column_slice(4, 3, &entries);
        let x = PsdQuery::new(&a * a.transpose()).unwrap();
        let lhs = mat_norm(&y, &x).unwrap().powi(2);
        prop_assert!((lhs - dot(&x.vectorized(), &lift_data(&y))).abs() < 1e-9);
        prop_assert!((norm(&lift_data(&y)) - dot(&y, &y)).abs() < 1e-12);
    }
}
