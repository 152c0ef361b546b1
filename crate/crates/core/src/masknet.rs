//! The adversarial edge scorer.
//!
//! For an edge `(u, v)` the score is
//! `s_uv = sigmoid(g([relu(p(x_u)), relu(p(x_v))]))` where `p` is an affine
//! projection to `d'` dimensions and `g` a two-layer MLP with a ReLU hidden
//! layer. Self-loops are never scored and carry a fixed value of 1.

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::enrich::EnrichedGraph;
use crate::error::{Error, Result};
use crate::params::{uniform_matrix, ParamSet};
use crate::tape::{Tape, Var};

pub const DEFAULT_PROJ_DIM: usize = 128;
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskNetParams {
    /// `d' x d`
    pub proj_weight: Array2<f64>,
    /// `1 x d'`
    pub proj_bias: Array2<f64>,
    /// `hidden x 2d'`
    pub hidden_weight: Array2<f64>,
    /// `1 x hidden`
    pub hidden_bias: Array2<f64>,
    /// `1 x hidden`
    pub out_weight: Array2<f64>,
    /// `1 x 1`
    pub out_bias: Array2<f64>,
}

impl ParamSet for MaskNetParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![
            &self.proj_weight,
            &self.proj_bias,
            &self.hidden_weight,
            &self.hidden_bias,
            &self.out_weight,
            &self.out_bias,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.proj_weight,
            &mut self.proj_bias,
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.out_weight,
            &mut self.out_bias,
        ]
    }

    fn tensor_names(&self) -> Vec<String> {
        [
            "proj_weight",
            "proj_bias",
            "hidden_weight",
            "hidden_bias",
            "out_weight",
            "out_bias",
        ]
        .iter()
        .map(|s| format!("mask.{s}"))
        .collect()
    }
}

impl MaskNetParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(d: usize, d_prime: usize, hidden: usize, rng: &mut R) -> Self {
        assert!(
            d >= 1 && d_prime >= 1 && hidden >= 1,
            "dimensions must be positive"
        );
        let b = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        MaskNetParams {
            proj_weight: uniform_matrix(d_prime, d, b(d), rng),
            proj_bias: Array2::zeros((1, d_prime)),
            hidden_weight: uniform_matrix(hidden, 2 * d_prime, b(2 * d_prime), rng),
            hidden_bias: Array2::zeros((1, hidden)),
            out_weight: uniform_matrix(1, hidden, b(hidden), rng),
            out_bias: Array2::zeros((1, 1)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.proj_weight.ncols()
    }

    pub fn on_tape(&self, tape: &mut Tape, tracked: bool) -> MaskNetVars {
        MaskNetVars {
            proj_weight: tape.leaf(self.proj_weight.clone(), tracked),
            proj_bias: tape.leaf(self.proj_bias.clone(), tracked),
            hidden_weight: tape.leaf(self.hidden_weight.clone(), tracked),
            hidden_bias: tape.leaf(self.hidden_bias.clone(), tracked),
            out_weight: tape.leaf(self.out_weight.clone(), tracked),
            out_bias: tape.leaf(self.out_bias.clone(), tracked),
        }
    }
}

/// Tape handles for the mask network parameters, in [`ParamSet`] order.
#[derive(Debug, Clone, Copy)]
pub struct MaskNetVars {
    pub proj_weight: Var,
    pub proj_bias: Var,
    pub hidden_weight: Var,
    pub hidden_bias: Var,
    pub out_weight: Var,
    pub out_bias: Var,
}

impl MaskNetVars {
    pub fn all(&self) -> [Var; 6] {
        [
            self.proj_weight,
            self.proj_bias,
            self.hidden_weight,
            self.hidden_bias,
            self.out_weight,
            self.out_bias,
        ]
    }
}

/// Tape nodes produced by [`mask_on_tape`].
#[derive(Debug, Clone, Copy)]
pub struct MaskVars {
    /// `m x 1` scores of the scored edges.
    pub scored: Var,
    /// `E x 1` scores followed by the fixed self-loop ones.
    pub full: Var,
}

/// Records the scores of `src[i] -> dst[i]` for every scored edge.
pub fn score_on_tape(
    tape: &mut Tape,
    p: &MaskNetVars,
    x: Var,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
) -> Var {
    let z = tape.linear(x, p.proj_weight, Some(p.proj_bias));
    let z = tape.relu(z);
    let zu = tape.gather(z, src);
    let zv = tape.gather(z, dst);
    let pair = tape.concat_cols(&[zu, zv]);
    let h = tape.linear(pair, p.hidden_weight, Some(p.hidden_bias));
    let h = tape.relu(h);
    let logit = tape.linear(h, p.out_weight, Some(p.out_bias));
    tape.sigmoid(logit)
}

pub fn mask_on_tape(tape: &mut Tape, p: &MaskNetVars, x: Var, graph: &EnrichedGraph) -> MaskVars {
    let m = graph.scored_len();
    let loops = graph.num_edges() - m;
    let src: Arc<[usize]> = graph.src()[..m].into();
    let dst: Arc<[usize]> = graph.dst()[..m].into();
    let scored = score_on_tape(tape, p, x, src, dst);
    let full = if loops > 0 {
        let ones = tape.constant(Array2::ones((loops, 1)));
        tape.concat_rows(&[scored, ones])
    } else {
        scored
    };
    MaskVars { scored, full }
}

/// Per-edge scores aligned to an enriched edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    values: Vec<f64>,
    scored: usize,
}

impl EdgeMask {
    /// Fails if any value lies outside `[0, 1]` or a self-loop entry is not 1.
    pub fn new(values: Vec<f64>, graph: &EnrichedGraph) -> Result<Self> {
        if values.len() != graph.num_edges() {
            return Err(Error::Dimension(format!(
                "mask has {} entries for {} edges",
                values.len(),
                graph.num_edges()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidGraph(format!(
                "mask value {v} outside [0, 1]"
            )));
        }
        if values[graph.self_loop_range()].iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidGraph(
                "self-loop mask entries must be 1".into(),
            ));
        }
        Ok(EdgeMask {
            values,
            scored: graph.scored_len(),
        })
    }

    /// Scores of the scored edges given in order; self-loops get 1.
    pub fn from_scored(scored: Vec<f64>, graph: &EnrichedGraph) -> Result<Self> {
        let mut values = scored;
        values.extend(std::iter::repeat_n(
            1.0,
            graph.num_edges() - graph.scored_len(),
        ));
        EdgeMask::new(values, graph)
    }

    pub fn ones(graph: &EnrichedGraph) -> Self {
        EdgeMask {
            values: vec![1.0; graph.num_edges()],
            scored: graph.scored_len(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scored(&self) -> &[f64] {
        &self.values[..self.scored]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean over scored edges; 0 when nothing is scored.
    pub fn mean_scored(&self) -> f64 {
        if self.scored == 0 {
            0.0
        } else {
            self.scored().iter().sum::<f64>() / self.scored as f64
        }
    }

    pub fn to_column(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.values.len(), 1), self.values.clone()).expect("column")
    }

    /// CSV rows `src,dst,origin,s` for every edge.
    pub fn to_csv(&self, graph: &EnrichedGraph) -> String {
        let mut out = String::from("src,dst,origin,s\n");
        for (e, s) in graph.edges().iter().zip(&self.values) {
            let _ = writeln!(out, "{},{},{},{:?}", e.src, e.dst, e.origin, s);
        }
        out
    }
}

fn check_dims(p: &MaskNetParams, x: &Array2<f64>) -> Result<()> {
    if p.input_dim() != x.ncols() {
        return Err(Error::Dimension(format!(
            "mask network expects {} features, graph has {}",
            p.input_dim(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Scores for arbitrary `(src, dst)` pairs; pairs with `src == dst` get 1.
pub fn score_edges(
    p: &MaskNetParams,
    x: &Array2<f64>,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    check_dims(p, x)?;
    let keep: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs[i].0 != pairs[i].1)
        .collect();
    let mut tape = Tape::new();
    let vars = p.on_tape(&mut tape, false);
    let xv = tape.constant(x.clone());
    let src: Arc<[usize]> = keep.iter().map(|&i| pairs[i].0).collect();
    let dst: Arc<[usize]> = keep.iter().map(|&i| pairs[i].1).collect();
    let s = score_on_tape(&mut tape, &vars, xv, src, dst);
    let mut out = vec![1.0; pairs.len()];
    for (k, &i) in keep.iter().enumerate() {
        out[i] = tape.value(s)[[k, 0]];
    }
    Ok(out)
}

pub fn mask_forward(p: &MaskNetParams, graph: &EnrichedGraph) -> Result<EdgeMask> {
    let x = graph.base().features();
    check_dims(p, x)?;
    let mut tape = Tape::new();
    let vars = p.on_tape(&mut tape, false);
    let xv = tape.constant(x.clone());
    let m = mask_on_tape(&mut tape, &vars, xv, graph);
    Ok(EdgeMask {
        values: tape.value(m.full).column(0).to_vec(),
        scored: graph.scored_len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, EdgeOrigin, Graph};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_graph() -> EnrichedGraph {
        let x = array![[1.0, 0.5], [2.0, -1.0], [0.0, 0.3]];
        let g = Graph::new(
            x,
            [
                Edge::new(0, 1, EdgeOrigin::Original),
                Edge::new(1, 0, EdgeOrigin::Original),
                Edge::new(1, 2, EdgeOrigin::Knn),
            ],
            vec![Some(0), Some(1), None],
            2,
            "t",
        )
        .unwrap();
        EnrichedGraph::plain(g, true)
    }

    #[test]
    fn parameter_count_matches_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = MaskNetParams::init(6775, 128, 64, &mut rng);
        assert_eq!(p.num_params(), 6775 * 128 + 128 + 256 * 64 + 64 + 64 + 1);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = MaskNetParams::init(3, 4, 5, &mut ChaCha8Rng::seed_from_u64(7));
        let b = MaskNetParams::init(3, 4, 5, &mut ChaCha8Rng::seed_from_u64(7));
        assert!(a.bit_eq(&b));
        let bound = 1.0 / 3f64.sqrt();
        assert!(a.proj_weight.iter().all(|v| v.abs() <= bound));
        assert!(a.proj_bias.iter().all(|&v| v == 0.0));
        let tiny = MaskNetParams::init(1, 1, 1, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(tiny.hidden_weight.dim(), (1, 2));
    }

    #[test]
    fn zero_weights_give_one_half() {
        let g = toy_graph();
        let p = MaskNetParams::init(2, 3, 4, &mut ChaCha8Rng::seed_from_u64(0)).zeros_like();
        let m = mask_forward(&p, &g).unwrap();
        assert!(m.scored().iter().all(|&s| s == 0.5));
        assert!(m.values()[g.self_loop_range()].iter().all(|&s| s == 1.0));
    }

    #[test]
    fn one_dimensional_hand_case() {
        // z_u = relu(1*x_u), z_v = relu(1*x_v); hidden = relu(z_u + z_v); logit = hidden.
        let p = MaskNetParams {
            proj_weight: array![[1.0]],
            proj_bias: array![[0.0]],
            hidden_weight: array![[1.0, 1.0]],
            hidden_bias: array![[0.0]],
            out_weight: array![[1.0]],
            out_bias: array![[0.0]],
        };
        let x = array![[1.0], [2.0]];
        let s = score_edges(&p, &x, &[(0, 1), (1, 1)]).unwrap();
        assert!((s[0] - 0.952_574_126_822_433_4).abs() < 1e-15);
        assert_eq!(s[1], 1.0);
    }

    #[test]
    fn direction_matters() {
        let g = toy_graph();
        let p = MaskNetParams::init(2, 3, 4, &mut ChaCha8Rng::seed_from_u64(2));
        let m = mask_forward(&p, &g).unwrap();
        // edges sorted: (0,1), (1,0), (1,2)
        assert_ne!(m.values()[0], m.values()[1]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = toy_graph();
        let p = MaskNetParams::init(5, 3, 4, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(mask_forward(&p, &g), Err(Error::Dimension(_))));
    }

    #[test]
    fn csv_dump_has_one_row_per_edge() {
        let g = toy_graph();
        let m = EdgeMask::ones(&g);
        let csv = m.to_csv(&g);
        assert_eq!(csv.lines().count(), 1 + g.num_edges());
        assert!(csv.lines().nth(3).unwrap().starts_with("1,2,knn,"));
    }
}
