mod common;

use common::*;
use edgemask_core::enrich::EnrichedGraph;
use edgemask_core::graph::{Edge, EdgeOrigin, Graph};
use edgemask_core::masknet::MaskNetParams;
use edgemask_core::tasknet::TaskNetParams;
use edgemask_core::theory::{
    dual_upper_bound, kkt_check, single_edge_sign, MaskLoss, SurrogateProblem, TaskNetLoss,
    DEFAULT_GRID_CAP,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn one_edge_graph(rng: &mut ChaCha8Rng) -> EnrichedGraph {
    let x = Array2::from_shape_fn((3, DIM), |_| rng.random_range(-1.0..1.0));
    let labels = vec![Some(0), Some(1), Some(2)];
    let g = Graph::new(x, [], labels, CLASSES, "one").unwrap();
    EnrichedGraph::from_parts(g, vec![Edge::new(0, 1, EdgeOrigin::Knn)], true)
}

#[test]
fn single_edge_descent_moves_against_q() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = small_tasknet_config();
    let mut signs = [0, 0];
    for _ in 0..20 {
        let eg = one_edge_graph(&mut rng);
        let task = TaskNetParams::init(DIM, CLASSES, &cfg, &mut rng);
        let mask = MaskNetParams::init(DIM, 4, 3, &mut rng);
        let lambda = rng.random_range(-0.2..0.2f64).max(0.0);
        let r = single_edge_sign(&task, &mask, &cfg, &eg, lambda, 1e-3).unwrap();
        assert!(r.consistent, "{r:?}");
        signs[(r.q > 0.0) as usize] += 1;
    }
    assert!(signs[0] > 0 && signs[1] > 0, "{signs:?}");
}

#[test]
fn tasknet_loss_is_bounded_by_every_dual_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small_tasknet_config();
    let eg = one_edge_graph(&mut rng);
    let task = TaskNetParams::init(DIM, CLASSES, &cfg, &mut rng);
    let loss = TaskNetLoss {
        task: &task,
        cfg: &cfg,
        graph: &eg,
    };
    let lambdas: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
    let r = dual_upper_bound(&loss, &lambdas, 0.3, 0.05, 1e-9, DEFAULT_GRID_CAP).unwrap();
    assert!(r.holds, "{r:?}");
    assert_eq!(r.points, 21);
    assert!(r.primal_argmax[0] <= 0.3 + 1e-12);
}

#[test]
fn surrogate_of_tasknet_matches_its_linearisation() {
    let eg = fixture_graph(11);
    let (task, _) = fixture_models(11);
    let cfg = small_tasknet_config();
    let loss = TaskNetLoss {
        task: &task,
        cfg: &cfg,
        graph: &eg,
    };
    let p = SurrogateProblem::from_loss(&loss, 0.5, 0.5).unwrap();
    assert_eq!(p.m(), SCORED);
    let h = 1e-6;
    let mut s = vec![0.0; SCORED];
    s[3] = h;
    let fd = (loss.value(&s).unwrap() - p.base_loss) / h;
    assert!((fd - p.c[3]).abs() < 1e-4, "{fd} vs {}", p.c[3]);
}

#[test]
fn kkt_rejects_a_tasknet_point_with_large_gradient() {
    let eg = fixture_graph(12);
    let (task, _) = fixture_models(12);
    let cfg = small_tasknet_config();
    let loss = TaskNetLoss {
        task: &task,
        cfg: &cfg,
        graph: &eg,
    };
    let s = vec![0.5; SCORED];
    let g = loss.gradient(&s).unwrap();
    let spread =
        g.iter().fold(0.0_f64, |a, v| a.max(*v)) - g.iter().fold(0.0_f64, |a, v| a.min(*v));
    assert!(spread > 1e-6);
    let cert = kkt_check(&loss, &s, 0.1, 0.5, 1e-9).unwrap();
    assert!(!cert.stationarity_ok);
}
