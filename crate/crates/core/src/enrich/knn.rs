use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeOrigin};

/// Rows scaled to unit length; all-zero rows are left at zero so that their
/// cosine similarity to everything is 0.
pub fn unit_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// Directed edges from every node to its `k` most cosine-similar peers.
/// Ties go to the lower node index.
pub fn knn_edges(x: ArrayView2<'_, f64>, k: usize) -> Result<Vec<Edge>> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::KTooLarge { k, nodes: n });
    }
    let unit = unit_rows(x);
    let mut edges = Vec::with_capacity(n * k);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let sims = unit.dot(&unit.row(i));
        scored.clear();
        scored.extend(
            sims.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &s)| (s, j)),
        );
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        scored.select_nth_unstable_by(k - 1, order);
        scored[..k].sort_unstable_by(order);
        edges.extend(
            scored[..k]
                .iter()
                .map(|&(_, j)| Edge::new(i, j, EdgeOrigin::Knn)),
        );
    }
    edges.sort_unstable_by_key(|e| (e.src, e.dst));
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn pairs(edges: &[Edge]) -> Vec<(usize, usize)> {
        edges.iter().map(|e| (e.src, e.dst)).collect()
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let x = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let out = knn_edges(x.view(), 1).unwrap();
        assert_eq!(pairs(&out), vec![(0, 1), (1, 0), (2, 0)]);
    }

    #[test]
    fn duplicated_rows_point_to_lowest_other() {
        let x = Array2::from_elem((5, 3), 0.7);
        let out = knn_edges(x.view(), 1).unwrap();
        assert_eq!(pairs(&out), vec![(0, 1), (1, 0), (2, 0), (3, 0), (4, 0)]);
    }

    #[test]
    fn k_equal_n_minus_one_is_complete() {
        let x = array![[1.0, 0.2], [0.3, 1.0], [-1.0, 0.5], [0.0, -2.0]];
        let out = knn_edges(x.view(), 3).unwrap();
        assert_eq!(out.len(), 12);
        assert!(out.iter().all(|e| e.src != e.dst));
    }

    #[test]
    fn k_too_large_is_rejected() {
        let x = array![[1.0], [2.0]];
        assert!(matches!(
            knn_edges(x.view(), 2),
            Err(Error::KTooLarge { k: 2, nodes: 2 })
        ));
    }

    #[test]
    fn zero_rows_have_zero_similarity() {
        // node 0 is zero: its similarities are all 0, node 2 is anti-aligned with 1 (-1 < 0).
        let x = array![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]];
        let out = knn_edges(x.view(), 1).unwrap();
        assert_eq!(pairs(&out), vec![(0, 1), (1, 0), (2, 0)]);
    }
}
