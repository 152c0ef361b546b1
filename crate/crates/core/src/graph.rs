//! Immutable attributed graphs, edge coalescing and file formats.
//!
//! Every graph is a directed edge list over `N` nodes with a dense `N x d`
//! feature matrix. Undirected inputs are stored as two directed entries and
//! edge lists are kept sorted by `(src, dst)` after every mutation so that
//! per-edge vectors (such as masks) can be aligned by index.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::enrich::EnrichedGraph;
use crate::error::{Error, Result};

/// Where an edge came from. Declaration order is not precedence; see [`EdgeOrigin::precedence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOrigin {
    Original,
    Knn,
    Spectral,
    SelfLoop,
}

impl EdgeOrigin {
    pub const ALL: [EdgeOrigin; 4] = [
        EdgeOrigin::Original,
        EdgeOrigin::Knn,
        EdgeOrigin::Spectral,
        EdgeOrigin::SelfLoop,
    ];

    /// Rank used when duplicates are merged: the highest rank survives.
    pub fn precedence(self) -> u8 {
        match self {
            EdgeOrigin::SelfLoop => 3,
            EdgeOrigin::Original => 2,
            EdgeOrigin::Knn => 1,
            EdgeOrigin::Spectral => 0,
        }
    }

    pub fn is_augmented(self) -> bool {
        matches!(self, EdgeOrigin::Knn | EdgeOrigin::Spectral)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeOrigin::Original => "original",
            EdgeOrigin::Knn => "knn",
            EdgeOrigin::Spectral => "spectral",
            EdgeOrigin::SelfLoop => "self_loop",
        }
    }
}

impl fmt::Display for EdgeOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeOrigin {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        EdgeOrigin::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown edge origin `{s}`"))
    }
}

/// A directed edge `src -> dst`. Messages flow from `src` into `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub origin: EdgeOrigin,
}

impl Edge {
    pub fn new(src: usize, dst: usize, origin: EdgeOrigin) -> Self {
        Edge { src, dst, origin }
    }

    pub fn is_self_loop(&self) -> bool {
        self.src == self.dst
    }
}

/// Removes duplicate `(src, dst)` pairs, keeping the origin with the highest
/// precedence (`Original > Knn > Spectral`), and sorts by `(src, dst)`.
pub fn coalesce(edges: impl IntoIterator<Item = Edge>) -> Vec<Edge> {
    let mut best: BTreeMap<(usize, usize), EdgeOrigin> = BTreeMap::new();
    for e in edges {
        best.entry((e.src, e.dst))
            .and_modify(|o| {
                if e.origin.precedence() > o.precedence() {
                    *o = e.origin;
                }
            })
            .or_insert(e.origin);
    }
    best.into_iter()
        .map(|((src, dst), origin)| Edge { src, dst, origin })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    features: Array2<f64>,
    edges: Vec<Edge>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    domain_id: String,
}

impl Graph {
    /// Builds a graph, coalescing `edges`. Fails if any index is out of
    /// range, a feature is non-finite, or a label exceeds `num_classes`.
    pub fn new(
        features: Array2<f64>,
        edges: impl IntoIterator<Item = Edge>,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        domain_id: impl Into<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "{} labels for {} feature rows",
                labels.len(),
                n
            )));
        }
        if let Some((idx, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let d = features.ncols().max(1);
            return Err(Error::InvalidGraph(format!(
                "non-finite feature at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        if let Some(y) = labels.iter().flatten().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "label {y} outside [0, {num_classes})"
            )));
        }
        let edges = coalesce(edges);
        if let Some(e) = edges.iter().find(|e| e.src >= n || e.dst >= n) {
            return Err(Error::InvalidGraph(format!(
                "edge ({}, {}) references a node outside [0, {n})",
                e.src, e.dst
            )));
        }
        Ok(Graph {
            features,
            edges,
            labels,
            num_classes,
            domain_id: domain_id.into(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().flatten().count()
    }

    pub fn with_labels(&self, labels: Vec<Option<usize>>) -> Result<Graph> {
        Graph::new(
            self.features.clone(),
            self.edges.iter().copied(),
            labels,
            self.num_classes,
            self.domain_id.clone(),
        )
    }

    pub fn with_edges(&self, edges: impl IntoIterator<Item = Edge>) -> Result<Graph> {
        Graph::new(
            self.features.clone(),
            edges,
            self.labels.clone(),
            self.num_classes,
            self.domain_id.clone(),
        )
    }

    pub(crate) fn set_num_classes(&mut self, c: usize) {
        self.num_classes = c;
    }

    /// Fraction of non-loop edges joining two labelled nodes of the same class.
    pub fn edge_homophily(&self) -> f64 {
        let (mut same, mut total) = (0usize, 0usize);
        for e in self.edges.iter().filter(|e| !e.is_self_loop()) {
            if let (Some(a), Some(b)) = (self.labels[e.src], self.labels[e.dst]) {
                total += 1;
                same += usize::from(a == b);
            }
        }
        if total == 0 {
            0.0
        } else {
            same as f64 / total as f64
        }
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for e in &self.edges {
            deg[e.dst] += 1;
        }
        deg
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&SerializedGraph::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Graph> {
        let s: SerializedGraph = serde_json::from_str(text)?;
        s.into_graph()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Graph> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Graph::from_json(&text)
    }

    /// Writes the three plain-text ingestion files. Each undirected pair is
    /// written once when both directions are present.
    pub fn write_text_files(&self, features: &Path, edges: &Path, labels: &Path) -> Result<()> {
        let mut out = String::new();
        for row in self.features.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        fs::write(features, out).map_err(|e| Error::io(features, e))?;

        let present: std::collections::HashSet<(usize, usize)> =
            self.edges.iter().map(|e| (e.src, e.dst)).collect();
        let mut out = String::new();
        for e in &self.edges {
            let reverse = present.contains(&(e.dst, e.src));
            if reverse && e.src > e.dst {
                continue;
            }
            out.push_str(&format!("{} {}\n", e.src, e.dst));
        }
        fs::write(edges, out).map_err(|e| Error::io(edges, e))?;

        let mut out = String::new();
        for y in &self.labels {
            match y {
                Some(y) => out.push_str(&format!("{y}\n")),
                None => out.push_str("-1\n"),
            }
        }
        fs::write(labels, out).map_err(|e| Error::io(labels, e))
    }
}

/// On-disk JSON layout of a [`Graph`].
///
/// ```text
/// {
///   "format": "edgemask-graph/1",
///   "domain_id": "...",
///   "num_nodes": N, "feature_dim": d, "num_classes": C,
///   "features": [[f64; d]; N],
///   "labels": [i64; N],            // -1 = unlabelled
///   "edges": [[src, dst, origin]]  // origin: original|knn|spectral|self_loop
/// }
/// ```
#[derive(Debug, Serialize, Deserialize)]
pub struct SerializedGraph {
    pub format: String,
    pub domain_id: String,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<i64>,
    pub edges: Vec<(usize, usize, EdgeOrigin)>,
}

pub const GRAPH_FORMAT: &str = "edgemask-graph/1";

impl From<&Graph> for SerializedGraph {
    fn from(g: &Graph) -> Self {
        SerializedGraph {
            format: GRAPH_FORMAT.to_string(),
            domain_id: g.domain_id.clone(),
            num_nodes: g.num_nodes(),
            feature_dim: g.feature_dim(),
            num_classes: g.num_classes,
            features: g.features.rows().into_iter().map(|r| r.to_vec()).collect(),
            labels: g
                .labels
                .iter()
                .map(|y| y.map_or(-1, |y| y as i64))
                .collect(),
            edges: g.edges.iter().map(|e| (e.src, e.dst, e.origin)).collect(),
        }
    }
}

impl SerializedGraph {
    pub fn into_graph(self) -> Result<Graph> {
        if self.format != GRAPH_FORMAT {
            return Err(Error::InvalidGraph(format!(
                "unsupported graph format `{}`",
                self.format
            )));
        }
        if self.features.len() != self.num_nodes {
            return Err(Error::Dimension(format!(
                "{} feature rows for num_nodes={}",
                self.features.len(),
                self.num_nodes
            )));
        }
        let mut flat = Vec::with_capacity(self.num_nodes * self.feature_dim);
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != self.feature_dim {
                return Err(Error::Dimension(format!(
                    "feature row {i} has {} columns, expected {}",
                    row.len(),
                    self.feature_dim
                )));
            }
            flat.extend_from_slice(row);
        }
        let features = Array2::from_shape_vec((self.num_nodes, self.feature_dim), flat)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let labels = self
            .labels
            .iter()
            .map(|&y| if y < 0 { None } else { Some(y as usize) })
            .collect();
        let edges = self.edges.iter().map(|&(s, d, o)| Edge::new(s, d, o));
        Graph::new(features, edges, labels, self.num_classes, self.domain_id)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads one domain from its feature, edge and label files. Every edge is
/// treated as undirected and symmetrised; the class count is `max label + 1`.
pub fn load_dataset(
    feature_file: &Path,
    edge_file: &Path,
    label_file: &Path,
    domain_id: &str,
) -> Result<Graph> {
    let text = read(feature_file)?;
    let mut flat = Vec::new();
    let mut dim = None;
    let mut rows = 0usize;
    for (line_no, line) in content_lines(&text) {
        let before = flat.len();
        for tok in split_fields(line) {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(feature_file, line_no, format!("bad number `{tok}`")))?;
            if !v.is_finite() {
                return Err(parse_err(feature_file, line_no, "non-finite feature"));
            }
            flat.push(v);
        }
        let width = flat.len() - before;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(parse_err(
                    feature_file,
                    line_no,
                    format!("row has {width} columns, expected {d}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let dim = dim.unwrap_or(0);
    let features =
        Array2::from_shape_vec((rows, dim), flat).map_err(|e| Error::Dimension(e.to_string()))?;

    let text = read(label_file)?;
    let mut labels = Vec::with_capacity(rows);
    let mut last_line = 0;
    for (line_no, line) in content_lines(&text) {
        let y: i64 = line
            .parse()
            .map_err(|_| parse_err(label_file, line_no, format!("bad label `{line}`")))?;
        labels.push(if y < 0 { None } else { Some(y as usize) });
        last_line = line_no;
    }
    if labels.len() != rows {
        return Err(parse_err(
            label_file,
            last_line,
            format!("{} labels for {rows} feature rows", labels.len()),
        ));
    }
    let num_classes = labels.iter().flatten().max().map_or(1, |&y| y + 1);

    let text = read(edge_file)?;
    let mut edges = Vec::new();
    for (line_no, line) in content_lines(&text) {
        let toks: Vec<&str> = split_fields(line).collect();
        if toks.len() != 2 {
            return Err(parse_err(
                edge_file,
                line_no,
                format!("expected `src dst`, got {} fields", toks.len()),
            ));
        }
        let mut ends = [0usize; 2];
        for (slot, tok) in ends.iter_mut().zip(&toks) {
            *slot = tok
                .parse()
                .map_err(|_| parse_err(edge_file, line_no, format!("bad node index `{tok}`")))?;
            if *slot >= rows {
                return Err(parse_err(
                    edge_file,
                    line_no,
                    format!("node index {slot} out of range for {rows} nodes"),
                ));
            }
        }
        edges.push(Edge::new(ends[0], ends[1], EdgeOrigin::Original));
        edges.push(Edge::new(ends[1], ends[0], EdgeOrigin::Original));
    }
    Graph::new(features, edges, labels, num_classes, domain_id)
}

/// Source domains plus an optional held-out target.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub sources: Vec<Graph>,
    pub target: Option<Graph>,
}

impl DomainDataset {
    /// Checks the shared feature dimension and aligns the sources to the
    /// largest class count among them. The target is widened to that count
    /// but never narrows or widens the sources.
    pub fn new(mut sources: Vec<Graph>, mut target: Option<Graph>) -> Result<Self> {
        let first = sources
            .first()
            .ok_or_else(|| Error::Config("at least one source domain is required".into()))?;
        let d = first.feature_dim();
        for g in sources.iter().chain(target.iter()) {
            if g.feature_dim() != d {
                return Err(Error::Dimension(format!(
                    "domain `{}` has feature dim {}, expected {d}",
                    g.domain_id(),
                    g.feature_dim()
                )));
            }
        }
        let c = sources.iter().map(Graph::num_classes).max().unwrap_or(1);
        for g in sources.iter_mut() {
            g.set_num_classes(c);
        }
        if let Some(t) = target.as_mut() {
            let own = t.num_classes();
            t.set_num_classes(own.max(c));
        }
        Ok(DomainDataset { sources, target })
    }

    pub fn feature_dim(&self) -> usize {
        self.sources[0].feature_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.sources[0].num_classes()
    }
}

/// Edge accounting before and after enrichment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeOriginStats {
    pub counts: BTreeMap<EdgeOrigin, usize>,
    pub total: usize,
    pub base_edges: usize,
    /// Enriched edges excluding appended self-loops.
    pub enriched_edges: usize,
    /// `None` when the base graph has no edges.
    pub increase_pct: Option<f64>,
    pub avg_degree_delta: f64,
}

impl EdgeOriginStats {
    pub fn increase_display(&self) -> String {
        match self.increase_pct {
            Some(p) => format!("{p:.1}%"),
            None => "n/a".to_string(),
        }
    }
}

pub fn edge_stats(before: &Graph, after: &EnrichedGraph) -> EdgeOriginStats {
    let mut counts = BTreeMap::new();
    for e in after.edges() {
        *counts.entry(e.origin).or_insert(0) += 1;
    }
    let base = before.edges().len();
    let enriched = after.scored_len();
    let delta = enriched as f64 - base as f64;
    EdgeOriginStats {
        counts,
        total: after.edges().len(),
        base_edges: base,
        enriched_edges: enriched,
        increase_pct: (base > 0).then(|| 100.0 * delta / base as f64),
        avg_degree_delta: if before.num_nodes() == 0 {
            0.0
        } else {
            delta / before.num_nodes() as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn e(s: usize, d: usize, o: EdgeOrigin) -> Edge {
        Edge::new(s, d, o)
    }

    #[test]
    fn coalesce_keeps_highest_precedence() {
        let out = coalesce([e(1, 2, EdgeOrigin::Original), e(1, 2, EdgeOrigin::Spectral)]);
        assert_eq!(out, vec![e(1, 2, EdgeOrigin::Original)]);
        let out = coalesce([e(0, 1, EdgeOrigin::Spectral), e(0, 1, EdgeOrigin::Knn)]);
        assert_eq!(out, vec![e(0, 1, EdgeOrigin::Knn)]);
    }

    #[test]
    fn coalesce_keeps_both_directions() {
        let out = coalesce([e(2, 1, EdgeOrigin::Knn), e(1, 2, EdgeOrigin::Knn)]);
        assert_eq!(
            out,
            vec![e(1, 2, EdgeOrigin::Knn), e(2, 1, EdgeOrigin::Knn)]
        );
        assert!(coalesce([]).is_empty());
    }

    #[test]
    fn graph_rejects_out_of_range_edges() {
        let x = array![[0.0], [1.0]];
        let err = Graph::new(x, [e(0, 2, EdgeOrigin::Original)], vec![None, None], 1, "a");
        assert!(matches!(err, Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn graph_rejects_non_finite_features() {
        let x = array![[0.0], [f64::NAN]];
        assert!(Graph::new(x, [], vec![None, None], 1, "a").is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let x = array![[0.1, -2.5e-300], [1.0 / 3.0, 7.0]];
        let g = Graph::new(
            x,
            [e(0, 1, EdgeOrigin::Knn), e(1, 0, EdgeOrigin::Original)],
            vec![Some(1), None],
            2,
            "dom",
        )
        .unwrap();
        let back = Graph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn stats_report_na_for_empty_base() {
        let x = array![[0.0], [1.0]];
        let g = Graph::new(x, [], vec![Some(0), Some(0)], 1, "a").unwrap();
        let enriched = EnrichedGraph::from_parts(g.clone(), vec![], true);
        let s = edge_stats(&g, &enriched);
        assert_eq!(s.increase_pct, None);
        assert_eq!(s.increase_display(), "n/a");
        assert_eq!(s.counts.values().sum::<usize>(), s.total);
    }
}
