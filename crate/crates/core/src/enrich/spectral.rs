//! Spectral clustering of node features.
//!
//! RBF affinity over the distinct feature rows, symmetric normalised
//! Laplacian `L = I - D^{-1/2} S D^{-1/2}`, embedding from the eigenvectors of
//! the smallest eigenvalues, row normalisation, then seeded k-means.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeOrigin};

pub const DEFAULT_SOLVER_CAP: usize = 5000;
const KMEANS_MAX_ITER: usize = 100;

/// RBF kernel width.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    /// Median of pairwise Euclidean distances.
    #[default]
    Median,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Median => s.serialize_str("median"),
            Bandwidth::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Value(f64),
        }
        match Repr::deserialize(d)? {
            Repr::Name(n) if n == "median" => Ok(Bandwidth::Median),
            Repr::Name(n) => n
                .parse::<f64>()
                .map(Bandwidth::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("bad bandwidth `{n}`"))),
            Repr::Value(v) => Ok(Bandwidth::Fixed(v)),
        }
    }
}

impl std::str::FromStr for Bandwidth {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "median" {
            return Ok(Bandwidth::Median);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 => Ok(Bandwidth::Fixed(v)),
            _ => Err(format!(
                "bandwidth must be `median` or a positive number, got `{s}`"
            )),
        }
    }
}

fn sq_dist(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *m;
    if v.len() % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Groups identical feature rows. Returns the representative rows and, for
/// every node, the index of its group.
fn distinct_rows(x: ArrayView2<'_, f64>) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut reps = Vec::new();
    let mut group = Vec::with_capacity(x.nrows());
    for (i, row) in x.rows().into_iter().enumerate() {
        // +0.0 and -0.0 compare equal as features
        let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
        let g = *seen.entry(key).or_insert_with(|| {
            reps.push(i);
            reps.len() - 1
        });
        group.push(g);
    }
    (reps, group)
}

/// Row-normalised spectral embedding (`n x k`) of the given points.
pub fn spectral_embedding(
    points: ArrayView2<'_, f64>,
    k: usize,
    bandwidth: Bandwidth,
) -> Result<Array2<f64>> {
    let n = points.nrows();
    let mut dist2 = DMatrix::<f64>::zeros(n, n);
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = sq_dist(points.row(i), points.row(j));
            dist2[(i, j)] = d2;
            dist2[(j, i)] = d2;
            dists.push(d2.sqrt());
        }
    }
    let zeta = match bandwidth {
        Bandwidth::Median => median(dists),
        Bandwidth::Fixed(z) => z,
    };
    let zeta = if zeta > 0.0 && zeta.is_finite() {
        zeta
    } else {
        1.0
    };
    let denom = 2.0 * zeta * zeta;

    let mut affinity = dist2.map(|d2| (-d2 / denom).exp());
    affinity.fill_diagonal(0.0);
    let inv_sqrt_deg: Vec<f64> = affinity
        .row_iter()
        .map(|r| {
            let d: f64 = r.sum();
            if d > f64::MIN_POSITIVE {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut laplacian = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            laplacian[(i, j)] -= inv_sqrt_deg[i] * affinity[(i, j)] * inv_sqrt_deg[j];
        }
    }
    if laplacian.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite Laplacian entry".into()));
    }
    let eig = SymmetricEigen::try_new(laplacian, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });

    let mut emb = Array2::<f64>::zeros((n, k));
    for (col, &idx) in order.iter().take(k).enumerate() {
        for row in 0..n {
            emb[[row, col]] = eig.eigenvectors[(row, idx)];
        }
    }
    for mut row in emb.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(emb)
}

/// Seeded k-means with k-means++ initialisation. Empty clusters are
/// re-seeded from the point farthest from its current centre.
pub fn kmeans<R: Rng + ?Sized>(points: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.nrows();
    assert!(k >= 1 && k <= n, "kmeans needs 1 <= k <= n");
    let mut centers: Vec<usize> = Vec::with_capacity(k);
    centers.push(rng.random_range(0..n));
    let mut best_d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(centers[0])))
        .collect();
    while centers.len() < k {
        let total: f64 = best_d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in best_d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if best_d2[pick] == 0.0 {
                // fell off the end through rounding
                pick = (0..n).rev().find(|&i| best_d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for (i, d) in best_d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    let mut centroids: Array2<f64> = Array2::zeros((k, points.ncols()));
    for (c, &i) in centers.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut dist_to_own = vec![0.0; n];
        for i in 0..n {
            let (best, d) = (0..k)
                .map(|c| (c, sq_dist(points.row(i), centroids.row(c))))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("k >= 1");
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
            dist_to_own[i] = d;
        }
        let mut sums = Array2::<f64>::zeros((k, points.ncols()));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(assign[i]);
            row += &points.row(i);
            counts[assign[i]] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dist_to_own[a].total_cmp(&dist_to_own[b]).then(b.cmp(&a)))
                    .expect("n >= 1");
                centroids.row_mut(c).assign(&points.row(far));
                dist_to_own[far] = 0.0;
                assign[far] = c;
                changed = true;
            } else {
                let mean = &sums.row(c) / count as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        if !changed {
            break;
        }
    }
    assign
}

/// Cluster id per node. Identical feature rows always share a cluster; when
/// there are no more distinct rows than clusters every distinct row is its
/// own cluster.
pub fn spectral_clusters<R: Rng + ?Sized>(
    x: ArrayView2<'_, f64>,
    clusters: usize,
    bandwidth: Bandwidth,
    solver_cap: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = x.nrows();
    if clusters < 2 {
        return Err(Error::Config("at least 2 clusters are required".into()));
    }
    if n < clusters {
        return Err(Error::Config(format!(
            "{clusters} clusters requested for {n} nodes"
        )));
    }
    let (reps, group) = distinct_rows(x);
    if reps.len() <= clusters {
        return Ok(group);
    }
    if reps.len() > solver_cap {
        return Err(Error::SolverCap {
            nodes: reps.len(),
            cap: solver_cap,
        });
    }
    let points = x.select(ndarray::Axis(0), &reps);
    let emb = spectral_embedding(points.view(), clusters, bandwidth)?;
    let rep_assign = kmeans(emb.view(), clusters, rng);
    Ok(group.into_iter().map(|g| rep_assign[g]).collect())
}

/// All directed intra-cluster pairs `(i, j)`, `i != j`.
pub fn cluster_edges(assign: &[usize]) -> Vec<Edge> {
    let k = assign.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assign.iter().enumerate() {
        members[c].push(i);
    }
    let mut edges = Vec::new();
    for group in &members {
        for &i in group {
            for &j in group {
                if i != j {
                    edges.push(Edge::new(i, j, EdgeOrigin::Spectral));
                }
            }
        }
    }
    edges.sort_unstable_by_key(|e| (e.src, e.dst));
    edges
}

pub fn spectral_edges<R: Rng + ?Sized>(
    x: ArrayView2<'_, f64>,
    clusters: usize,
    bandwidth: Bandwidth,
    solver_cap: usize,
    rng: &mut R,
) -> Result<Vec<Edge>> {
    let assign = spectral_clusters(x, clusters, bandwidth, solver_cap, rng)?;
    Ok(cluster_edges(&assign))
}
