//! Multi-domain graphs with invariant features and shifting structure.
//!
//! Every domain draws node features from the same class-conditional
//! Gaussians and wires a homophilous backbone at a shared rate. On top of
//! that each domain gets spurious edges: nodes are split into random
//! confounder groups, and within a group a node of class `c` is joined to
//! nodes of class `sigma_d(c)`, where `sigma_d` is a derangement drawn per
//! domain. The class pairing a naive model can exploit therefore changes
//! from domain to domain.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DomainDataset, Edge, EdgeOrigin, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub nodes: usize,
    pub classes: usize,
    pub dim: usize,
    /// Distance of each class centre from the origin, in noise units.
    pub separation: f64,
    /// Backbone partners drawn per node.
    pub backbone_degree: usize,
    /// Probability that a backbone partner shares the node's class.
    pub homophily: f64,
    /// Spurious partners drawn per node at strength 1.
    pub spurious_degree: usize,
    /// Confounder groups per domain.
    pub spurious_groups: usize,
    /// Strength in `[0, 1]` per domain; its length is the domain count.
    pub spurious_strength: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            nodes: 120,
            classes: 3,
            dim: 8,
            separation: 2.5,
            backbone_degree: 2,
            homophily: 0.9,
            spurious_degree: 4,
            spurious_groups: 2,
            spurious_strength: vec![0.6, 0.8, 1.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn domains(&self) -> usize {
        self.spurious_strength.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.classes < 2 {
            return bad("classes must be >= 2");
        }
        if self.dim < self.classes {
            return bad("dim must be >= classes");
        }
        if self.nodes < self.classes {
            return bad("need at least one node per class");
        }
        if self.spurious_strength.is_empty() {
            return bad("at least one domain is required");
        }
        if self.spurious_groups < 1 {
            return bad("spurious_groups must be >= 1");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.homophily) || !self.spurious_strength.iter().copied().all(unit) {
            return bad("rates must lie in [0, 1]");
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad("separation must be non-negative");
        }
        Ok(())
    }
}

/// Class centres: `separation` along the first `classes` axes.
pub fn class_centres(cfg: &SynthConfig) -> Array2<f64> {
    let mut c = Array2::zeros((cfg.classes, cfg.dim));
    for k in 0..cfg.classes {
        c[[k, k]] = cfg.separation;
    }
    c
}

/// Uniform random permutation of `0..n` with no fixed point.
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    assert!(n >= 2, "no derangement of fewer than two items");
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &v)| i != v) {
            return p;
        }
    }
}

fn domain_rng(seed: u64, domain: usize, part: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain as u64) * 4 + part);
    rng
}

/// Per-domain generation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRecipe {
    pub domain: String,
    pub pairing: Vec<usize>,
    pub backbone_edges: usize,
    pub spurious_edges: usize,
}

pub fn generate(cfg: &SynthConfig) -> Result<(DomainDataset, Vec<DomainRecipe>)> {
    cfg.validate()?;
    let centres = class_centres(cfg);
    let mut graphs = Vec::with_capacity(cfg.domains());
    let mut recipes = Vec::with_capacity(cfg.domains());
    for (d, &strength) in cfg.spurious_strength.iter().enumerate() {
        let name = format!("domain{d}");
        let mut rng_x = domain_rng(cfg.seed, d, 0);
        let mut rng_backbone = domain_rng(cfg.seed, d, 1);
        let mut rng_spurious = domain_rng(cfg.seed, d, 2);

        let labels: Vec<usize> = (0..cfg.nodes).map(|i| i % cfg.classes).collect();
        let x = Array2::from_shape_fn((cfg.nodes, cfg.dim), |(i, j)| {
            let z: f64 = StandardNormal.sample(&mut rng_x);
            centres[[labels[i], j]] + z
        });
        let by_class: Vec<Vec<usize>> = (0..cfg.classes)
            .map(|c| (0..cfg.nodes).filter(|&i| labels[i] == c).collect())
            .collect();

        let mut backbone = BTreeSet::new();
        for u in 0..cfg.nodes {
            for _ in 0..cfg.backbone_degree {
                let same = rng_backbone.random::<f64>() < cfg.homophily;
                let pool: Vec<usize> = if same {
                    by_class[labels[u]]
                        .iter()
                        .copied()
                        .filter(|&v| v != u)
                        .collect()
                } else {
                    (0..cfg.nodes).filter(|&v| labels[v] != labels[u]).collect()
                };
                if let Some(&v) = pool.get(rng_backbone.random_range(0..pool.len().max(1))) {
                    backbone.insert((u.min(v), u.max(v)));
                }
            }
        }

        let pairing = derangement(cfg.classes, &mut rng_spurious);
        let group: Vec<usize> = (0..cfg.nodes)
            .map(|_| rng_spurious.random_range(0..cfg.spurious_groups))
            .collect();
        let per_node = (strength * cfg.spurious_degree as f64).round() as usize;
        let mut spurious = BTreeSet::new();
        for u in 0..cfg.nodes {
            let target = pairing[labels[u]];
            let pool: Vec<usize> = by_class[target]
                .iter()
                .copied()
                .filter(|&v| group[v] == group[u])
                .collect();
            if pool.is_empty() {
                continue;
            }
            for _ in 0..per_node {
                let v = pool[rng_spurious.random_range(0..pool.len())];
                let key = (u.min(v), u.max(v));
                if !backbone.contains(&key) {
                    spurious.insert(key);
                }
            }
        }

        let edges = backbone.iter().chain(&spurious).flat_map(|&(a, b)| {
            [
                Edge::new(a, b, EdgeOrigin::Original),
                Edge::new(b, a, EdgeOrigin::Original),
            ]
        });
        let g = Graph::new(
            x,
            edges,
            labels.iter().map(|&y| Some(y)).collect(),
            cfg.classes,
            name.clone(),
        )?;
        recipes.push(DomainRecipe {
            domain: name,
            pairing,
            backbone_edges: backbone.len(),
            spurious_edges: spurious.len(),
        });
        graphs.push(g);
    }
    Ok((DomainDataset::new(graphs, None)?, recipes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainShift {
    pub domain: String,
    pub homophily: f64,
    pub mean_degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub domains: Vec<DomainShift>,
    /// Largest pairwise 1-Wasserstein distance between degree distributions.
    pub degree_distance: f64,
    /// Largest pairwise total-variation distance between the class-pair
    /// distributions of edges.
    pub structural_distance: f64,
    /// Largest pairwise mean absolute gap of per-dimension feature means
    /// and standard deviations.
    pub feature_distance: f64,
}

fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // integrate |F_a - F_b| over the merged support
    let mut pts: Vec<f64> = a.iter().chain(&b).copied().collect();
    pts.sort_by(f64::total_cmp);
    let cdf = |xs: &[f64], t: f64| xs.partition_point(|&v| v <= t) as f64 / xs.len() as f64;
    pts.windows(2)
        .map(|w| (cdf(&a, w[0]) - cdf(&b, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

fn class_pair_distribution(g: &Graph) -> Vec<f64> {
    let c = g.num_classes();
    let mut counts = vec![0.0; c * c];
    let mut total = 0.0;
    for e in g.edges() {
        if let (Some(a), Some(b)) = (g.labels()[e.src], g.labels()[e.dst]) {
            counts[a * c + b] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|v| *v /= total);
    }
    counts
}

fn feature_moments(g: &Graph) -> (Vec<f64>, Vec<f64>) {
    let x = g.features();
    let n = x.nrows() as f64;
    let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
    let std = x
        .columns()
        .into_iter()
        .zip(&mean)
        .map(|(c, m)| (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (mean, std)
}

/// Structural and feature statistics across domains.
pub fn verify_shift(domains: &[Graph]) -> Result<ShiftReport> {
    if domains.len() < 2 {
        return Err(Error::Config(
            "shift report needs at least two domains".into(),
        ));
    }
    let degrees: Vec<Vec<f64>> = domains
        .iter()
        .map(|g| g.in_degrees().into_iter().map(|d| d as f64).collect())
        .collect();
    let pairs = class_pairs(domains.len());
    let moments: Vec<_> = domains.iter().map(feature_moments).collect();
    let classes: Vec<_> = domains.iter().map(class_pair_distribution).collect();
    let max_over =
        |f: &dyn Fn(usize, usize) -> f64| pairs.iter().map(|&(i, j)| f(i, j)).fold(0.0, f64::max);
    let degree_distance = max_over(&|i, j| wasserstein_1d(&degrees[i], &degrees[j]));
    let structural_distance = max_over(&|i, j| {
        if classes[i].len() != classes[j].len() {
            return 1.0;
        }
        0.5 * classes[i]
            .iter()
            .zip(&classes[j])
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    });
    let feature_distance = max_over(&|i, j| {
        let (mi, si) = &moments[i];
        let (mj, sj) = &moments[j];
        let gap: f64 = mi
            .iter()
            .zip(mj)
            .chain(si.iter().zip(sj))
            .map(|(a, b)| (a - b).abs())
            .sum();
        gap / (2 * mi.len().max(1)) as f64
    });
    Ok(ShiftReport {
        domains: domains
            .iter()
            .zip(&degrees)
            .map(|(g, d)| DomainShift {
                domain: g.domain_id().to_string(),
                homophily: g.edge_homophily(),
                mean_degree: d.iter().sum::<f64>() / d.len().max(1) as f64,
            })
            .collect(),
        degree_distance,
        structural_distance,
        feature_distance,
    })
}

fn class_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect()
}
