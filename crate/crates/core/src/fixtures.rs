//! Seeded toy graphs and models for the numerical checks.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::enrich::EnrichedGraph;
use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeOrigin, Graph};
use crate::masknet::MaskNetParams;
use crate::tasknet::{TaskNetConfig, TaskNetParams};

#[derive(Debug, Clone)]
pub struct CheckFixture {
    pub graph: EnrichedGraph,
    pub task: TaskNetParams,
    pub mask: MaskNetParams,
    pub cfg: TaskNetConfig,
}

/// `nodes` nodes with `dim` features, `scored` distinct non-loop edges whose
/// origins cycle through original, original, kNN, spectral, and self-loops.
/// Mask-network biases are drawn away from zero so every ReLU sits at a
/// differentiable point.
pub fn check_fixture(
    nodes: usize,
    scored: usize,
    dim: usize,
    classes: usize,
    seed: u64,
) -> Result<CheckFixture> {
    if nodes < 2 || scored > nodes * (nodes - 1) || classes < 1 || dim < 1 {
        return Err(Error::Config(format!(
            "cannot build a fixture with {nodes} nodes, {scored} edges, dim {dim}, {classes} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((nodes, dim), |_| rng.random_range(-1.0..1.0));
    let labels = (0..nodes)
        .map(|_| Some(rng.random_range(0..classes)))
        .collect();
    let mut pairs = BTreeSet::new();
    while pairs.len() < scored {
        let (u, v) = (rng.random_range(0..nodes), rng.random_range(0..nodes));
        if u != v {
            pairs.insert((u, v));
        }
    }
    let body: Vec<Edge> = pairs
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
    let originals: Vec<Edge> = body
        .iter()
        .copied()
        .filter(|e| e.origin == EdgeOrigin::Original)
        .collect();
    let g = Graph::new(x, originals, labels, classes, "fixture")?;
    let graph = EnrichedGraph::from_parts(g, body, true);
    let cfg = TaskNetConfig {
        layers: 2,
        heads: 2,
        hidden: 3,
        ..Default::default()
    };
    let task = TaskNetParams::init(dim, classes, &cfg, &mut rng);
    let mut mask = MaskNetParams::init(dim, 4, 3, &mut rng);
    for b in [
        &mut mask.proj_bias,
        &mut mask.hidden_bias,
        &mut mask.out_bias,
    ] {
        b.mapv_inplace(|_| {
            let v: f64 = rng.random_range(0.05..0.3);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
    }
    Ok(CheckFixture {
        graph,
        task,
        mask,
        cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_has_requested_shape() {
        let f = check_fixture(8, 16, 3, 3, 0).unwrap();
        assert_eq!(f.graph.scored_len(), 16);
        assert_eq!(f.graph.num_edges(), 24);
        assert!(f.mask.hidden_bias.iter().all(|b| b.abs() >= 0.05));
        assert!(check_fixture(3, 7, 2, 2, 0).is_err());
    }
}
