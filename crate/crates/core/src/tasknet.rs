//! Mask-aware multi-head graph attention classifier.
//!
//! For an edge `v -> u` (message from `v` into `u`) and head `k`:
//!
//! ```text
//! z_u   = W_k h_u
//! e_uv  = LeakyReLU(a_k . [z_u || z_v || w_k s_uv])
//! alpha = softmax of e_uv over the in-edges of u
//! m_uv  = s_uv * alpha_uv * z_v
//! h'_u  = act(sum_v m_uv)
//! ```
//!
//! Intermediate layers concatenate heads, the last layer averages them and
//! logits are `W_out h_u`.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::enrich::EnrichedGraph;
use crate::error::{Error, Result};
use crate::masknet::EdgeMask;
use crate::params::{glorot, ParamSet};
use crate::tape::{Tape, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Relu,
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            _ => Err(format!("unknown activation `{s}` (expected elu or relu)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskNetConfig {
    pub layers: usize,
    pub heads: usize,
    /// Width of every head.
    pub hidden: usize,
    pub activation: Activation,
    pub attn_dropout: f64,
    pub layer_dropout: f64,
}

impl Default for TaskNetConfig {
    fn default() -> Self {
        TaskNetConfig {
            layers: 2,
            heads: 8,
            hidden: 64,
            activation: Activation::Elu,
            attn_dropout: 0.6,
            layer_dropout: 0.5,
        }
    }
}

impl TaskNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.heads < 1 || self.hidden < 1 {
            return Err(Error::Config(
                "layers, heads and hidden must be >= 1".into(),
            ));
        }
        for (name, p) in [
            ("attn_dropout", self.attn_dropout),
            ("layer_dropout", self.layer_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `d_h x d_in`
    pub weight: Array2<f64>,
    /// `1 x (2 d_h + 1)`: receiver part, sender part, mask channel.
    pub attn: Array2<f64>,
    /// `1 x 1` scale of the mask channel.
    pub mask_weight: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatLayerParams {
    pub heads: Vec<HeadParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNetParams {
    pub layers: Vec<GatLayerParams>,
    /// `C x d_h`
    pub w_out: Array2<f64>,
}

impl ParamSet for TaskNetParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for h in &layer.heads {
                out.extend([&h.weight, &h.attn, &h.mask_weight]);
            }
        }
        out.push(&self.w_out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for h in &mut layer.heads {
                out.extend([&mut h.weight, &mut h.attn, &mut h.mask_weight]);
            }
        }
        out.push(&mut self.w_out);
        out
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for k in 0..layer.heads.len() {
                for t in ["weight", "attn", "mask_weight"] {
                    out.push(format!("task.layer{l}.head{k}.{t}"));
                }
            }
        }
        out.push("task.w_out".into());
        out
    }
}

impl TaskNetParams {
    /// Glorot-uniform weights and attention vectors; mask weights start at 1.
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        classes: usize,
        cfg: &TaskNetConfig,
        rng: &mut R,
    ) -> Self {
        let dh = cfg.hidden;
        let layers = (0..cfg.layers)
            .map(|l| {
                let d_in = if l == 0 { d } else { cfg.heads * dh };
                GatLayerParams {
                    heads: (0..cfg.heads)
                        .map(|_| HeadParams {
                            weight: glorot(dh, d_in, rng),
                            attn: glorot(1, 2 * dh + 1, rng),
                            mask_weight: Array2::ones((1, 1)),
                        })
                        .collect(),
                }
            })
            .collect();
        TaskNetParams {
            layers,
            w_out: glorot(classes, dh, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].heads[0].weight.ncols()
    }

    pub fn on_tape(&self, tape: &mut Tape, tracked: bool) -> TaskNetVars {
        TaskNetVars {
            layers: self
                .layers
                .iter()
                .map(|layer| {
                    layer
                        .heads
                        .iter()
                        .map(|h| HeadVars {
                            weight: tape.leaf(h.weight.clone(), tracked),
                            attn: tape.leaf(h.attn.clone(), tracked),
                            mask_weight: tape.leaf(h.mask_weight.clone(), tracked),
                        })
                        .collect()
                })
                .collect(),
            w_out: tape.leaf(self.w_out.clone(), tracked),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub weight: Var,
    pub attn: Var,
    pub mask_weight: Var,
}

/// Tape handles in [`ParamSet`] order.
#[derive(Debug, Clone)]
pub struct TaskNetVars {
    pub layers: Vec<Vec<HeadVars>>,
    pub w_out: Var,
}

impl TaskNetVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for h in layer {
                out.extend([h.weight, h.attn, h.mask_weight]);
            }
        }
        out.push(self.w_out);
        out
    }
}

/// Edge endpoints of the graph being convolved.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub num_nodes: usize,
}

impl EdgeIndex {
    pub fn new(graph: &EnrichedGraph) -> Self {
        EdgeIndex {
            src: graph.src().clone(),
            dst: graph.dst().clone(),
            num_nodes: graph.num_nodes(),
        }
    }

    /// Every node needs an in-edge for its attention softmax.
    pub fn check_in_degrees(&self) -> Result<()> {
        let mut seen = vec![false; self.num_nodes];
        for &d in self.dst.iter() {
            seen[d] = true;
        }
        match seen.iter().position(|&s| !s) {
            Some(node) => Err(Error::IsolatedNode { node }),
            None => Ok(()),
        }
    }
}

/// Per-head intermediate nodes of one layer.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    /// `N x d_h` transformed features.
    pub z: Var,
    /// `E x 1` attention logits after LeakyReLU.
    pub logits: Var,
    /// `E x 1` attention coefficients (after dropout, if any).
    pub alpha: Var,
    /// `E x d_h` messages `s * alpha * z_src`.
    pub messages: Var,
    /// `N x d_h` aggregated messages before the activation.
    pub pre_activation: Var,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub heads: Vec<HeadTrace>,
    pub output: Var,
}

/// Dropout state for a training-mode forward pass.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rng: &'a mut R,
    pub attn: f64,
    pub features: f64,
}

fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Elu => tape.elu(x),
        Activation::Relu => tape.relu(x),
    }
}

/// One attention layer. `s` is the `E x 1` mask aligned to `edges`.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer<R: Rng + ?Sized>(
    tape: &mut Tape,
    heads: &[HeadVars],
    h: Var,
    edges: &EdgeIndex,
    s: Var,
    last: bool,
    act: Activation,
    mut dropout: Option<&mut Dropout<'_, R>>,
) -> LayerTrace {
    let n = edges.num_nodes;
    let mut traces = Vec::with_capacity(heads.len());
    let mut outs = Vec::with_capacity(heads.len());
    for hv in heads {
        let dh = tape.value(hv.weight).nrows();
        let z = tape.linear(h, hv.weight, None);
        let a_dst = tape.slice_cols(hv.attn, 0, dh);
        let a_src = tape.slice_cols(hv.attn, dh, dh);
        let a_mask = tape.slice_cols(hv.attn, 2 * dh, 1);
        let score_dst = tape.linear(z, a_dst, None);
        let score_src = tape.linear(z, a_src, None);
        let e_dst = tape.gather(score_dst, edges.dst.clone());
        let e_src = tape.gather(score_src, edges.src.clone());
        let mask_coef = tape.mul_scalar(a_mask, hv.mask_weight);
        let e_mask = tape.mul_scalar(s, mask_coef);
        let e = tape.add(e_dst, e_src);
        let e = tape.add(e, e_mask);
        let logits = tape.leaky_relu(e, LEAKY_SLOPE);
        let mut alpha = tape.segment_softmax(logits, edges.dst.clone(), n);
        if let Some(d) = dropout.as_deref_mut() {
            if d.attn > 0.0 {
                let shape = tape.value(alpha).dim();
                let keep = tape.constant(dropout_mask(shape, d.attn, d.rng));
                alpha = tape.hadamard(alpha, keep);
            }
        }
        let coef = tape.hadamard(alpha, s);
        let z_src = tape.gather(z, edges.src.clone());
        let messages = tape.row_scale(z_src, coef);
        let pre = tape.scatter_add(messages, edges.dst.clone(), n);
        outs.push(activate(tape, pre, act));
        traces.push(HeadTrace {
            z,
            logits,
            alpha,
            messages,
            pre_activation: pre,
        });
    }
    let output = if last {
        tape.mean_of(&outs)
    } else {
        tape.concat_cols(&outs)
    };
    LayerTrace {
        heads: traces,
        output,
    }
}

#[derive(Debug, Clone)]
pub struct TaskNetTrace {
    pub layers: Vec<LayerTrace>,
    /// `N x C`
    pub logits: Var,
}

pub fn tasknet_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &TaskNetVars,
    cfg: &TaskNetConfig,
    x: Var,
    edges: &EdgeIndex,
    s: Var,
    mut dropout: Option<&mut Dropout<'_, R>>,
) -> TaskNetTrace {
    let mut h = x;
    let mut layers = Vec::with_capacity(p.layers.len());
    let depth = p.layers.len();
    for (l, heads) in p.layers.iter().enumerate() {
        if l > 0 {
            if let Some(d) = dropout.as_deref_mut() {
                if d.features > 0.0 {
                    let shape = tape.value(h).dim();
                    let keep = tape.constant(dropout_mask(shape, d.features, d.rng));
                    h = tape.hadamard(h, keep);
                }
            }
        }
        let trace = gat_layer(
            tape,
            heads,
            h,
            edges,
            s,
            l + 1 == depth,
            cfg.activation,
            dropout.as_deref_mut(),
        );
        h = trace.output;
        layers.push(trace);
    }
    let logits = tape.linear(h, p.w_out, None);
    TaskNetTrace { layers, logits }
}

fn check_inputs(p: &TaskNetParams, graph: &EnrichedGraph, mask: &EdgeMask) -> Result<EdgeIndex> {
    if p.input_dim() != graph.base().feature_dim() {
        return Err(Error::Dimension(format!(
            "classifier expects {} features, graph has {}",
            p.input_dim(),
            graph.base().feature_dim()
        )));
    }
    if mask.len() != graph.num_edges() {
        return Err(Error::Dimension(format!(
            "mask has {} entries for {} edges",
            mask.len(),
            graph.num_edges()
        )));
    }
    let idx = EdgeIndex::new(graph);
    idx.check_in_degrees()?;
    Ok(idx)
}

/// Evaluation-mode logits (`N x C`, dropout off).
pub fn tasknet_forward(
    p: &TaskNetParams,
    cfg: &TaskNetConfig,
    graph: &EnrichedGraph,
    mask: &EdgeMask,
) -> Result<Array2<f64>> {
    let idx = check_inputs(p, graph, mask)?;
    let mut tape = Tape::new();
    let vars = p.on_tape(&mut tape, false);
    let x = tape.constant(graph.base().features().clone());
    let s = tape.constant(mask.to_column());
    let trace = tasknet_on_tape::<rand_chacha::ChaCha8Rng>(&mut tape, &vars, cfg, x, &idx, s, None);
    let logits = tape.value(trace.logits).clone();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: "classifier logits".into(),
        });
    }
    Ok(logits)
}

/// Mean cross-entropy over labelled nodes.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[Option<usize>]) -> Result<f64> {
    if labels.len() != logits.nrows() {
        return Err(Error::Dimension("labels vs logits rows".into()));
    }
    if labels.iter().all(Option::is_none) {
        return Err(Error::NoLabels);
    }
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let ce = tape.cross_entropy(l, labels.to_vec().into());
    Ok(tape.scalar(ce))
}

pub fn predict(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                    if v > best.1 {
                        (c, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, EdgeOrigin, Graph};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> TaskNetConfig {
        TaskNetConfig {
            layers: 2,
            heads: 2,
            hidden: 3,
            ..Default::default()
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Array2::zeros((4, 5));
        let l = cross_entropy(&logits, &[Some(0), Some(3), None, Some(4)]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_cross_entropy() {
        let l = cross_entropy(&array![[2.0, 0.0]], &[Some(0)]).unwrap();
        let expected = -(2f64.exp() / (2f64.exp() + 1.0)).ln();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.126_928).abs() < 1e-6);
    }

    #[test]
    fn large_margin_loss_vanishes() {
        let l = cross_entropy(&array![[800.0, 0.0, 0.0]], &[Some(0)]).unwrap();
        assert!(l < 1e-300);
    }

    #[test]
    fn no_labels_is_an_error() {
        assert!(matches!(
            cross_entropy(&Array2::zeros((2, 2)), &[None, None]),
            Err(Error::NoLabels)
        ));
    }

    #[test]
    fn isolated_node_without_loops_is_an_error() {
        let g = Graph::new(
            array![[1.0], [2.0]],
            [Edge::new(0, 1, EdgeOrigin::Original)],
            vec![Some(0), Some(0)],
            1,
            "g",
        )
        .unwrap();
        let eg = EnrichedGraph::plain(g, false);
        let p = TaskNetParams::init(1, 1, &small_cfg(), &mut ChaCha8Rng::seed_from_u64(0));
        let err = tasknet_forward(&p, &small_cfg(), &eg, &EdgeMask::ones(&eg));
        assert!(matches!(err, Err(Error::IsolatedNode { node: 0 })));
    }

    #[test]
    fn zero_output_weights_give_zero_logits() {
        let g = Graph::new(array![[1.0, 2.0]], [], vec![Some(0)], 1, "g").unwrap();
        let eg = EnrichedGraph::plain(g, true);
        let mut p = TaskNetParams::init(2, 1, &small_cfg(), &mut ChaCha8Rng::seed_from_u64(0));
        p.w_out.fill(0.0);
        let logits = tasknet_forward(&p, &small_cfg(), &eg, &EdgeMask::ones(&eg)).unwrap();
        assert_eq!(logits, array![[0.0]]);
    }

    #[test]
    fn param_names_align_with_tensors() {
        let p = TaskNetParams::init(4, 3, &small_cfg(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.tensor_names().len(), p.tensors().len());
        assert_eq!(p.tensors().len(), 2 * 2 * 3 + 1);
        assert_eq!(p.layers[1].heads[0].weight.dim(), (3, 6));
    }

    #[test]
    fn activation_parses() {
        assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
        assert!("tanh".parse::<Activation>().is_err());
    }
}
