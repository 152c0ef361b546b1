//! Feature-derived edges and the enriched graph.
//!
//! The full kNN and spectral edge sets are computed once per graph
//! ([`FeatureEdges::precompute`]); each call to [`FeatureEdges::sample`]
//! draws fresh subsets and unions them with the original edges.

pub mod knn;
pub mod spectral;

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{coalesce, Edge, EdgeOrigin, Graph};

pub use knn::knn_edges;
pub use spectral::{spectral_edges, Bandwidth, DEFAULT_SOLVER_CAP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichConfig {
    /// Neighbours per node in the kNN graph.
    pub k: usize,
    /// Number of spectral clusters.
    pub clusters: usize,
    pub gamma_knn: f64,
    pub gamma_spec: f64,
    pub bandwidth: Bandwidth,
    pub self_loops: bool,
    /// Largest node count handed to the dense eigensolver.
    pub solver_cap: usize,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        EnrichConfig {
            k: 10,
            clusters: 100,
            gamma_knn: 0.1,
            gamma_spec: 0.1,
            bandwidth: Bandwidth::Median,
            self_loops: true,
            solver_cap: DEFAULT_SOLVER_CAP,
        }
    }
}

impl EnrichConfig {
    /// Original edges plus self-loops only.
    pub fn original_only() -> Self {
        EnrichConfig {
            gamma_knn: 0.0,
            gamma_spec: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.clusters < 2 {
            return Err(Error::Config("clusters must be >= 2".into()));
        }
        for (name, g) in [
            ("gamma_knn", self.gamma_knn),
            ("gamma_spec", self.gamma_spec),
        ] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {g}")));
            }
        }
        if let Bandwidth::Fixed(z) = self.bandwidth {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::Config(format!(
                    "bandwidth must be positive, got {z}"
                )));
            }
        }
        Ok(())
    }

    /// Same construction with every sampled set taken in full.
    pub fn full_sampling(&self) -> Self {
        EnrichConfig {
            gamma_knn: if self.gamma_knn > 0.0 { 1.0 } else { 0.0 },
            gamma_spec: if self.gamma_spec > 0.0 { 1.0 } else { 0.0 },
            ..self.clone()
        }
    }
}

/// The union of original and sampled feature edges over a base graph.
/// Self-loops, when present, occupy the tail of the edge list, one per node
/// in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedGraph {
    base: Arc<Graph>,
    edges: Vec<Edge>,
    scored: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
}

impl EnrichedGraph {
    /// Coalesces `body` (dropping any `i -> i` pairs) and optionally appends
    /// one self-loop per node.
    pub fn from_parts(base: impl Into<Arc<Graph>>, body: Vec<Edge>, self_loops: bool) -> Self {
        let base = base.into();
        let mut edges = coalesce(body.into_iter().filter(|e| !e.is_self_loop()));
        let scored = edges.len();
        if self_loops {
            edges.extend((0..base.num_nodes()).map(|i| Edge::new(i, i, EdgeOrigin::SelfLoop)));
        }
        let src = edges.iter().map(|e| e.src).collect();
        let dst = edges.iter().map(|e| e.dst).collect();
        EnrichedGraph {
            base,
            edges,
            scored,
            src,
            dst,
        }
    }

    /// The original edges only.
    pub fn plain(base: impl Into<Arc<Graph>>, self_loops: bool) -> Self {
        let base = base.into();
        let body = base.edges().to_vec();
        Self::from_parts(base, body, self_loops)
    }

    pub fn base(&self) -> &Graph {
        &self.base
    }

    pub fn base_arc(&self) -> &Arc<Graph> {
        &self.base
    }

    pub fn num_nodes(&self) -> usize {
        self.base.num_nodes()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of edges the mask network scores (everything but self-loops).
    pub fn scored_len(&self) -> usize {
        self.scored
    }

    pub fn self_loop_range(&self) -> Range<usize> {
        self.scored..self.edges.len()
    }

    pub fn src(&self) -> &Arc<[usize]> {
        &self.src
    }

    pub fn dst(&self) -> &Arc<[usize]> {
        &self.dst
    }

    /// Node ordering permuted by `perm` (`new index = perm[old index]`),
    /// edges re-sorted. Used for equivariance checks.
    pub fn relabel(&self, perm: &[usize]) -> Result<EnrichedGraph> {
        let n = self.num_nodes();
        if perm.len() != n {
            return Err(Error::Dimension("permutation length".into()));
        }
        let base = &self.base;
        let mut x = base.features().clone();
        let mut labels = vec![None; n];
        for old in 0..n {
            x.row_mut(perm[old]).assign(&base.features().row(old));
            labels[perm[old]] = base.labels()[old];
        }
        let map = |e: &Edge| Edge::new(perm[e.src], perm[e.dst], e.origin);
        let g = Graph::new(
            x,
            base.edges().iter().map(map),
            labels,
            base.num_classes(),
            base.domain_id(),
        )?;
        let body = self.edges[..self.scored].iter().map(map).collect();
        Ok(EnrichedGraph::from_parts(
            g,
            body,
            self.scored < self.edges.len(),
        ))
    }
}

/// Draws `floor(ratio * |edges|)` edges uniformly without replacement,
/// preserving their relative order.
pub fn sample_edges<R: Rng + ?Sized>(edges: &[Edge], ratio: f64, rng: &mut R) -> Vec<Edge> {
    assert!(
        (0.0..=1.0).contains(&ratio),
        "sampling ratio outside [0, 1]"
    );
    let amount = (ratio * edges.len() as f64).floor() as usize;
    if amount >= edges.len() {
        return edges.to_vec();
    }
    let mut idx = rand::seq::index::sample(rng, edges.len(), amount).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| edges[i]).collect()
}

/// Cached full kNN and spectral edge sets for one graph.
#[derive(Debug, Clone)]
pub struct FeatureEdges {
    graph: Arc<Graph>,
    pub knn: Vec<Edge>,
    pub spectral: Vec<Edge>,
}

impl FeatureEdges {
    /// Sets with a zero sampling ratio are skipped.
    pub fn precompute<R: Rng + ?Sized>(
        graph: impl Into<Arc<Graph>>,
        cfg: &EnrichConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let graph = graph.into();
        let x = graph.features().view();
        let knn = if cfg.gamma_knn > 0.0 {
            knn_edges(x, cfg.k)?
        } else {
            Vec::new()
        };
        let spectral = if cfg.gamma_spec > 0.0 {
            spectral_edges(x, cfg.clusters, cfg.bandwidth, cfg.solver_cap, rng)?
        } else {
            Vec::new()
        };
        Ok(FeatureEdges {
            graph,
            knn,
            spectral,
        })
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn sample<R: Rng + ?Sized>(&self, cfg: &EnrichConfig, rng: &mut R) -> EnrichedGraph {
        let mut body = self.graph.edges().to_vec();
        body.extend(sample_edges(&self.spectral, cfg.gamma_spec, rng));
        body.extend(sample_edges(&self.knn, cfg.gamma_knn, rng));
        EnrichedGraph::from_parts(self.graph.clone(), body, cfg.self_loops)
    }
}

pub fn enrich<R: Rng + ?Sized>(
    g: impl Into<Arc<Graph>>,
    cfg: &EnrichConfig,
    rng: &mut R,
) -> Result<EnrichedGraph> {
    Ok(FeatureEdges::precompute(g, cfg, rng)?.sample(cfg, rng))
}
