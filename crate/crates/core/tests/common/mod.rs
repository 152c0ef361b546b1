#![allow(dead_code)]

use std::collections::BTreeSet;

use edgemask_core::enrich::EnrichedGraph;
use edgemask_core::graph::{Edge, EdgeOrigin, Graph};
use edgemask_core::masknet::MaskNetParams;
use edgemask_core::tasknet::{Activation, TaskNetConfig, TaskNetParams};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NODES: usize = 8;
pub const SCORED: usize = 16;
pub const DIM: usize = 3;
pub const CLASSES: usize = 3;

/// 8 nodes, 16 distinct scored edges of mixed origin plus self-loops.
pub fn fixture_graph(seed: u64) -> EnrichedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((NODES, DIM), |_| rng.random_range(-1.0..1.0));
    let labels: Vec<Option<usize>> = (0..NODES)
        .map(|i| {
            if i == 5 {
                None
            } else {
                Some(rng.random_range(0..CLASSES))
            }
        })
        .collect();
    let mut pairs = BTreeSet::new();
    while pairs.len() < SCORED {
        let (u, v) = (rng.random_range(0..NODES), rng.random_range(0..NODES));
        if u != v {
            pairs.insert((u, v));
        }
    }
    let edges: Vec<Edge> = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (u, v))| {
            let origin = match i % 4 {
                0 | 1 => EdgeOrigin::Original,
                2 => EdgeOrigin::Knn,
                _ => EdgeOrigin::Spectral,
            };
            Edge::new(u, v, origin)
        })
        .collect();
    let originals: Vec<Edge> = edges
        .iter()
        .copied()
        .filter(|e| e.origin == EdgeOrigin::Original)
        .collect();
    let g = Graph::new(x, originals, labels, CLASSES, "fixture").unwrap();
    let eg = EnrichedGraph::from_parts(g, edges, true);
    assert_eq!(eg.scored_len(), SCORED);
    eg
}

pub fn small_tasknet_config() -> TaskNetConfig {
    TaskNetConfig {
        layers: 2,
        heads: 2,
        hidden: 3,
        ..Default::default()
    }
}

pub fn fixture_models(seed: u64) -> (TaskNetParams, MaskNetParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let task = TaskNetParams::init(DIM, CLASSES, &small_tasknet_config(), &mut rng);
    let mut mask = MaskNetParams::init(DIM, 4, 3, &mut rng);
    // nonzero biases keep every ReLU away from its kink
    for b in [
        &mut mask.proj_bias,
        &mut mask.hidden_bias,
        &mut mask.out_bias,
    ] {
        b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    (task, mask)
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.2 * v
    }
}

fn act(v: f64, a: Activation) -> f64 {
    match a {
        Activation::Elu => {
            if v > 0.0 {
                v
            } else {
                v.exp_m1()
            }
        }
        Activation::Relu => v.max(0.0),
    }
}

/// Plain multi-head GAT with no mask channel, written with explicit loops.
/// Returns the logits and the per-layer, per-head attention coefficients.
pub fn reference_gat(
    p: &TaskNetParams,
    cfg: &TaskNetConfig,
    x: &Array2<f64>,
    edges: &[(usize, usize)],
) -> (Array2<f64>, Vec<Vec<Vec<f64>>>) {
    let n = x.nrows();
    let mut h = x.clone();
    let mut alphas = Vec::new();
    let depth = p.layers.len();
    for (l, layer) in p.layers.iter().enumerate() {
        let mut outs = Vec::new();
        let mut layer_alpha = Vec::new();
        for head in &layer.heads {
            let dh = head.weight.nrows();
            let z = h.dot(&head.weight.t());
            let a = head.attn.row(0);
            let e: Vec<f64> = edges
                .iter()
                .map(|&(src, dst)| {
                    let mut v = 0.0;
                    for k in 0..dh {
                        v += a[k] * z[[dst, k]] + a[dh + k] * z[[src, k]];
                    }
                    leaky(v)
                })
                .collect();
            let mut alpha = vec![0.0; edges.len()];
            for u in 0..n {
                let idx: Vec<usize> = (0..edges.len()).filter(|&i| edges[i].1 == u).collect();
                let mx = idx.iter().map(|&i| e[i]).fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = idx.iter().map(|&i| (e[i] - mx).exp()).sum();
                for &i in &idx {
                    alpha[i] = (e[i] - mx).exp() / sum;
                }
            }
            let mut out = Array2::zeros((n, dh));
            for (i, &(src, dst)) in edges.iter().enumerate() {
                for k in 0..dh {
                    out[[dst, k]] += alpha[i] * z[[src, k]];
                }
            }
            outs.push(out.mapv(|v| act(v, cfg.activation)));
            layer_alpha.push(alpha);
        }
        alphas.push(layer_alpha);
        h = if l + 1 == depth {
            let mut m = Array2::zeros(outs[0].dim());
            for o in &outs {
                m += o;
            }
            m / outs.len() as f64
        } else {
            ndarray::concatenate(Axis(1), &outs.iter().map(|o| o.view()).collect::<Vec<_>>())
                .unwrap()
        };
    }
    (h.dot(&p.w_out.t()), alphas)
}

pub fn edge_pairs(g: &EnrichedGraph) -> Vec<(usize, usize)> {
    g.edges().iter().map(|e| (e.src, e.dst)).collect()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
