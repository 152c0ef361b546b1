use edgemask_core::enrich::knn::knn_edges;
use edgemask_core::enrich::spectral::{cluster_edges, spectral_clusters};
use edgemask_core::enrich::{sample_edges, Bandwidth, EnrichedGraph};
use edgemask_core::graph::{coalesce, Edge, EdgeOrigin, Graph};
use edgemask_core::masknet::{mask_forward, MaskNetParams};
use edgemask_core::theory::{surrogate_optimal_mask, SurrogateProblem};
use edgemask_core::train::{dual_ascent_lambda, f1_scores};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn origin() -> impl Strategy<Value = EdgeOrigin> {
    prop_oneof![
        Just(EdgeOrigin::Original),
        Just(EdgeOrigin::Knn),
        Just(EdgeOrigin::Spectral)
    ]
}

fn edges(n: usize) -> impl Strategy<Value = Vec<Edge>> {
    prop::collection::vec((0..n, 0..n, origin()), 0..40)
        .prop_map(|v| v.into_iter().map(|(s, d, o)| Edge::new(s, d, o)).collect())
}

fn features(n: usize, d: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0..3.0f64, n * d)
        .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
}

proptest! {
    #[test]
    fn coalesce_is_idempotent_and_keeps_highest_precedence(es in edges(6)) {
        let once = coalesce(es.clone());
        prop_assert_eq!(coalesce(once.clone()), once.clone());
        prop_assert!(once.windows(2).all(|w| (w[0].src, w[0].dst) < (w[1].src, w[1].dst)));
        for e in &once {
            let best = es
                .iter()
                .filter(|f| f.src == e.src && f.dst == e.dst)
                .map(|f| f.origin.precedence())
                .max()
                .unwrap();
            prop_assert_eq!(e.origin.precedence(), best);
        }
    }

    #[test]
    fn graph_json_round_trip_is_exact(x in features(5, 3), es in edges(5), seed in any::<u64>()) {
        let labels = (0..5).map(|i| if (seed >> i) & 1 == 1 { Some(i % 3) } else { None }).collect();
        let g = Graph::new(x, es, labels, 3, "d").unwrap();
        let back = Graph::from_json(&g.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn knn_matches_brute_force(x in features(9, 3), k in 1usize..5) {
        let got = knn_edges(x.view(), k).unwrap();
        let cos = |i: usize, j: usize| {
            let (a, b) = (x.row(i), x.row(j));
            let na = a.dot(&a).sqrt();
            let nb = b.dot(&b).sqrt();
            if na == 0.0 || nb == 0.0 { 0.0 } else { a.dot(&b) / (na * nb) }
        };
        let mut want = Vec::new();
        for i in 0..9 {
            let mut others: Vec<usize> = (0..9).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| cos(i, b).total_cmp(&cos(i, a)).then(a.cmp(&b)));
            let mut top: Vec<usize> = others[..k].to_vec();
            top.sort_unstable();
            want.extend(top.into_iter().map(|j| (i, j)));
        }
        let got: Vec<(usize, usize)> = got.iter().map(|e| (e.src, e.dst)).collect();
        // cosine values agree to rounding, so compare only when the k-th
        // and (k+1)-th neighbours are clearly separated
        prop_assume!((0..9).all(|i| {
            let mut s: Vec<f64> = (0..9).filter(|&j| j != i).map(|j| cos(i, j)).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            s[k - 1] - s[k] > 1e-9
        }));
        prop_assert_eq!(got, want);
    }

    #[test]
    fn spectral_edges_are_symmetric_and_loop_free(x in features(12, 2), clusters in 2usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assign = spectral_clusters(x.view(), clusters, Bandwidth::Median, 100, &mut rng).unwrap();
        prop_assert!(assign.iter().all(|&c| c < clusters));
        let es = cluster_edges(&assign);
        for e in &es {
            prop_assert!(e.src != e.dst);
            prop_assert_eq!(assign[e.src], assign[e.dst]);
            prop_assert!(es.iter().any(|f| f.src == e.dst && f.dst == e.src));
        }
    }

    #[test]
    fn duplicated_rows_share_a_cluster(x in features(8, 2), seed in any::<u64>()) {
        let mut doubled = Array2::zeros((16, 2));
        for i in 0..8 {
            doubled.row_mut(i).assign(&x.row(i));
            doubled.row_mut(i + 8).assign(&x.row(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assign = spectral_clusters(doubled.view(), 3, Bandwidth::Median, 100, &mut rng).unwrap();
        for i in 0..8 {
            prop_assert_eq!(assign[i], assign[i + 8]);
        }
    }

    #[test]
    fn sampling_takes_a_subset_of_the_floor_size(es in edges(7), ratio in 0.0..=1.0f64, seed in any::<u64>()) {
        let es = coalesce(es);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let got = sample_edges(&es, ratio, &mut rng);
        prop_assert_eq!(got.len(), (ratio * es.len() as f64).floor() as usize);
        prop_assert!(got.iter().all(|e| es.contains(e)));
    }

    #[test]
    fn mask_scores_are_probabilities_and_follow_relabelling(
        x in features(6, 3),
        es in edges(6),
        seed in any::<u64>(),
    ) {
        let g = Graph::new(x, es.clone(), vec![None; 6], 2, "m").unwrap();
        let body: Vec<Edge> = coalesce(es).into_iter().filter(|e| !e.is_self_loop()).collect();
        let eg = EnrichedGraph::from_parts(g, body, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = MaskNetParams::init(3, 4, 3, &mut rng);
        let s = mask_forward(&p, &eg).unwrap();
        prop_assert!(s.scored().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((0.0..=1.0).contains(&s.mean_scored()));
        let perm = [3, 0, 5, 1, 4, 2];
        let moved = eg.relabel(&perm).unwrap();
        let t = mask_forward(&p, &moved).unwrap();
        for (e, edge) in eg.edges()[..eg.scored_len()].iter().enumerate() {
            let j = moved
                .edges()
                .iter()
                .position(|f| f.src == perm[edge.src] && f.dst == perm[edge.dst])
                .unwrap();
            prop_assert_eq!(s.values()[e].to_bits(), t.values()[j].to_bits());
        }
    }

    #[test]
    fn f1_scores_are_bounded(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..50)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let (micro, macro_, acc) = f1_scores(&pred, &truth, 4);
        for v in [micro, macro_, acc] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((micro - acc).abs() < 1e-15);
    }

    #[test]
    fn indicator_dominates_any_mask(
        c in prop::collection::vec(-1.0..1.0f64, 1..8),
        tau in 0.0..0.5f64,
        s in prop::collection::vec(0.0..=1.0f64, 8),
    ) {
        let p = SurrogateProblem::new(c.clone(), 0.1, tau, 1.0).unwrap();
        let sol = surrogate_optimal_mask(&p);
        prop_assert!(sol.value >= p.penalized(&s[..c.len()]) - 1e-12);
    }

    #[test]
    fn projected_multiplier_is_non_negative(
        lambda in 0.0..10.0f64,
        mean in 0.0..=1.0f64,
        rho in 0.0..=1.0f64,
        step in 0.0..5.0f64,
    ) {
        let next = dual_ascent_lambda(lambda, mean, rho, step);
        prop_assert!(next >= 0.0);
        if mean > rho {
            prop_assert!(next >= lambda);
        }
    }
}
