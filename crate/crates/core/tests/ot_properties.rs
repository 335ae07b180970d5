//! Randomized properties of the transport solvers.

mod common;

use common::oracles::{brute_assignment, lp_vertex_transport};
use distmatch::ot::{self, ground_cost, mallows_exact, mallows_simplex, CostKind, DiscreteMeasure};
use distmatch::tensor::Tensor;
use proptest::prelude::*;

fn cloud(max_n: usize, d: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-2.0f64..2.0, n * d).prop_map(move |v| Tensor::matrix(n, d, v).unwrap())
    })
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n)
}

fn weighted(max_n: usize, d: usize) -> impl Strategy<Value = DiscreteMeasure> {
    cloud(max_n, d).prop_flat_map(|t| {
        let n = t.rows();
        weights(n).prop_map(move |w| DiscreteMeasure::normalized(t.clone(), w).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_plan_is_feasible_and_matches_its_cost(mu in weighted(7, 2), nu in weighted(7, 2)) {
        let (w, c) = mallows_exact(&mu, &nu, CostKind::L2).unwrap();
        prop_assert!(c.marginal_violation(&mu.weights, &nu.weights) < 1e-12);
        prop_assert!(c.plan.data().iter().all(|&m| m >= 0.0));
        let cost = ground_cost(&mu.points, &nu.points, CostKind::L2).unwrap();
        let direct: f64 = c.plan.data().iter().zip(cost.data()).map(|(p, q)| p * q).sum();
        prop_assert!((direct - w).abs() < 1e-12);
        // at a vertex the support is at most n1 + n2 - 1 cells
        let support = c.plan.data().iter().filter(|&&m| m > 0.0).count();
        prop_assert!(support < mu.len() + nu.len());
    }

    #[test]
    fn exact_matches_lp_vertices(mu in weighted(4, 3), nu in weighted(4, 3)) {
        let cost = ground_cost(&mu.points, &nu.points, CostKind::L1).unwrap();
        let want = lp_vertex_transport(&mu.weights, &nu.weights, &cost);
        let (got, _) = mallows_simplex(&mu, &nu, CostKind::L1).unwrap();
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
    }

    #[test]
    fn uniform_equal_sizes_match_brute_force(x in cloud(6, 2), seed in 0u64..1000) {
        let n = x.rows();
        let y = Tensor::matrix(n, 2, (0..2 * n).map(|i| ((seed as f64 + 1.0) * (i as f64 + 0.5)).sin()).collect()).unwrap();
        let (mu, nu) = (DiscreteMeasure::uniform(x), DiscreteMeasure::uniform(y));
        let (brute, _) = brute_assignment(&ground_cost(&mu.points, &nu.points, CostKind::L2).unwrap());
        let (hung, _) = mallows_exact(&mu, &nu, CostKind::L2).unwrap();
        let (simp, _) = mallows_simplex(&mu, &nu, CostKind::L2).unwrap();
        prop_assert!((hung - brute / n as f64).abs() < 1e-9);
        prop_assert!((simp - brute / n as f64).abs() < 1e-9);
    }

    #[test]
    fn distance_is_symmetric_and_zero_on_itself(mu in weighted(6, 3), nu in weighted(6, 3)) {
        let (ab, _) = mallows_exact(&mu, &nu, CostKind::L2).unwrap();
        let (ba, _) = mallows_exact(&nu, &mu, CostKind::L2).unwrap();
        prop_assert!((ab - ba).abs() < 1e-10);
        let (aa, _) = mallows_exact(&mu, &mu, CostKind::L2).unwrap();
        prop_assert!(aa.abs() < 1e-12);
    }

    #[test]
    fn translation_moves_uniform_clouds_by_its_length(x in cloud(6, 2), dx in -1.0f64..1.0, dy in -1.0f64..1.0) {
        let mut y = x.clone();
        for i in 0..y.rows() {
            let r = y.row_mut(i);
            r[0] += dx;
            r[1] += dy;
        }
        let (w, _) = mallows_exact(&DiscreteMeasure::uniform(x), &DiscreteMeasure::uniform(y), CostKind::L2).unwrap();
        prop_assert!((w - (dx * dx + dy * dy).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn sinkhorn_upper_bounds_exact(mu in weighted(6, 2), nu in weighted(6, 2)) {
        let (w, _) = mallows_exact(&mu, &nu, CostKind::L2).unwrap();
        let (s, c) = ot::sinkhorn(&mu, &nu, CostKind::L2, 0.05, 100_000, 1e-6).unwrap();
        prop_assert!(c.marginal_violation(&mu.weights, &nu.weights) < 1e-9);
        prop_assert!(s >= w - 1e-9, "{} < {}", s, w);
    }
}
