//! Gradients of the classification loss and of the adversary objective.
//!
//! * [`grad_tasknet`]: classifier gradients with the mask held constant.
//! * [`grad_masknet`]: gradients of `-CE + lambda * mean(s)` w.r.t. the mask
//!   network only, with the classifier frozen. Also returns `dCE/ds`.
//! * [`finite_diff_check`]: central-difference verification for any
//!   [`ParamSet`].

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::enrich::EnrichedGraph;
use crate::error::{Error, Result};
use crate::masknet::{mask_on_tape, EdgeMask, MaskNetParams};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tasknet::{
    tasknet_on_tape, Dropout, EdgeIndex, TaskNetConfig, TaskNetParams, TaskNetTrace,
};

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// Value of the differentiated objective.
    pub objective: f64,
    /// Cross-entropy at the evaluated point.
    pub loss: f64,
    pub task: Option<TaskNetParams>,
    pub mask: Option<MaskNetParams>,
    /// `dCE/ds_e` for every scored edge.
    pub mask_sensitivity: Option<Vec<f64>>,
    /// Mask values used in the forward pass (scored edges only).
    pub mask_values: Vec<f64>,
    /// `N x C` logits of the forward pass.
    pub logits: Array2<f64>,
}

fn labels_of(graph: &EnrichedGraph) -> Result<Arc<[Option<usize>]>> {
    let labels = graph.base().labels();
    if labels.iter().all(Option::is_none) {
        return Err(Error::NoLabels);
    }
    Ok(labels.to_vec().into())
}

fn check_finite(tape: &Tape, trace: &TaskNetTrace) -> Result<()> {
    for (l, layer) in trace.layers.iter().enumerate() {
        for (k, head) in layer.heads.iter().enumerate() {
            for (what, v) in [
                ("attention logits", head.logits),
                ("aggregation", head.pre_activation),
            ] {
                if tape.value(v).iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        location: format!("layer {l} head {k} {what}"),
                    });
                }
            }
        }
    }
    if tape.value(trace.logits).iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            location: "output logits".into(),
        });
    }
    Ok(())
}

fn collect<P: ParamSet>(template: &P, vars: &[Var], grads: &crate::tape::Gradients) -> P {
    let mut out = template.zeros_like();
    for (t, &v) in out.tensors_mut().into_iter().zip(vars) {
        if let Some(g) = grads.get(v) {
            t.assign(g);
        }
    }
    out
}

fn prepare(task: &TaskNetParams, graph: &EnrichedGraph) -> Result<EdgeIndex> {
    if task.input_dim() != graph.base().feature_dim() {
        return Err(Error::Dimension(format!(
            "classifier expects {} features, graph has {}",
            task.input_dim(),
            graph.base().feature_dim()
        )));
    }
    let idx = EdgeIndex::new(graph);
    idx.check_in_degrees()?;
    Ok(idx)
}

/// Cross-entropy gradients w.r.t. every classifier tensor, mask constant.
pub fn grad_tasknet(
    task: &TaskNetParams,
    cfg: &TaskNetConfig,
    graph: &EnrichedGraph,
    mask: &EdgeMask,
    dropout: Option<&mut Dropout<'_, ChaCha8Rng>>,
) -> Result<GradientBundle> {
    let idx = prepare(task, graph)?;
    if mask.len() != graph.num_edges() {
        return Err(Error::Dimension("mask length vs edge count".into()));
    }
    let labels = labels_of(graph)?;
    let mut tape = Tape::new();
    let vars = task.on_tape(&mut tape, true);
    let x = tape.constant(graph.base().features().clone());
    let s = tape.constant(mask.to_column());
    let trace = tasknet_on_tape(&mut tape, &vars, cfg, x, &idx, s, dropout);
    check_finite(&tape, &trace)?;
    let ce = tape.cross_entropy(trace.logits, labels);
    let loss = tape.scalar(ce);
    let grads = tape.backward(ce);
    Ok(GradientBundle {
        objective: loss,
        loss,
        task: Some(collect(task, &vars.all(), &grads)),
        mask: None,
        mask_sensitivity: None,
        mask_values: mask.scored().to_vec(),
        logits: tape.value(trace.logits).clone(),
    })
}

/// Gradients of `-CE + lambda * mean(s)` w.r.t. the mask network, with the
/// classifier frozen.
pub fn grad_masknet(
    task: &TaskNetParams,
    masknet: &MaskNetParams,
    cfg: &TaskNetConfig,
    graph: &EnrichedGraph,
    lambda: f64,
    dropout: Option<&mut Dropout<'_, ChaCha8Rng>>,
) -> Result<GradientBundle> {
    let idx = prepare(task, graph)?;
    if masknet.input_dim() != graph.base().feature_dim() {
        return Err(Error::Dimension("mask network input dim".into()));
    }
    let labels = labels_of(graph)?;
    let mut tape = Tape::new();
    let tvars = task.on_tape(&mut tape, false);
    let mvars = masknet.on_tape(&mut tape, true);
    let x = tape.constant(graph.base().features().clone());
    let mask = mask_on_tape(&mut tape, &mvars, x, graph);
    let trace = tasknet_on_tape(&mut tape, &tvars, cfg, x, &idx, mask.full, dropout);
    check_finite(&tape, &trace)?;
    let ce = tape.cross_entropy(trace.logits, labels);
    let neg = tape.scale(ce, -1.0);
    let objective = if graph.scored_len() > 0 {
        let mean = tape.mean(mask.scored);
        let reg = tape.scale(mean, lambda);
        tape.add(neg, reg)
    } else {
        neg
    };
    let grads = tape.backward(objective);
    // dJ/ds = -dCE/ds + lambda/m; recover dCE/ds from the scored node's adjoint.
    let m = graph.scored_len();
    let sensitivity = grads.get(mask.scored).map(|g| {
        g.column(0)
            .iter()
            .map(|&dj| -(dj - lambda / m as f64))
            .collect::<Vec<_>>()
    });
    Ok(GradientBundle {
        objective: tape.scalar(objective),
        loss: tape.scalar(ce),
        task: None,
        mask: Some(collect(masknet, &mvars.all(), &grads)),
        mask_sensitivity: sensitivity,
        mask_values: tape.value(mask.scored).column(0).to_vec(),
        logits: tape.value(trace.logits).clone(),
    })
}

/// Cross-entropy and its gradient w.r.t. the scored mask entries, for a
/// mask given directly (self-loops fixed at 1). Evaluation mode.
pub fn loss_and_mask_gradient(
    task: &TaskNetParams,
    cfg: &TaskNetConfig,
    graph: &EnrichedGraph,
    scored: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let idx = prepare(task, graph)?;
    if scored.len() != graph.scored_len() {
        return Err(Error::Dimension("mask length vs scored edges".into()));
    }
    let labels = labels_of(graph)?;
    let mut tape = Tape::new();
    let vars = task.on_tape(&mut tape, false);
    let x = tape.constant(graph.base().features().clone());
    let s_scored =
        tape.param(Array2::from_shape_vec((scored.len(), 1), scored.to_vec()).expect("column"));
    let loops = graph.num_edges() - graph.scored_len();
    let s = if loops > 0 {
        let ones = tape.constant(Array2::ones((loops, 1)));
        tape.concat_rows(&[s_scored, ones])
    } else {
        s_scored
    };
    let trace = tasknet_on_tape::<ChaCha8Rng>(&mut tape, &vars, cfg, x, &idx, s, None);
    check_finite(&tape, &trace)?;
    let ce = tape.cross_entropy(trace.logits, labels);
    let grads = tape.backward(ce);
    let g = grads.get_or_zeros(s_scored, (scored.len(), 1));
    Ok((tape.scalar(ce), g.column(0).to_vec()))
}

/// Cross-entropy only, for a mask given directly. Evaluation mode.
pub fn loss_at_mask(
    task: &TaskNetParams,
    cfg: &TaskNetConfig,
    graph: &EnrichedGraph,
    scored: &[f64],
) -> Result<f64> {
    let mask = EdgeMask::from_scored(scored.to_vec(), graph)?;
    let logits = crate::tasknet::tasknet_forward(task, cfg, graph, &mask)?;
    crate::tasknet::cross_entropy(&logits, graph.base().labels())
}

/// Jacobian of the scored mask w.r.t. the mask network: one gradient
/// bundle (`ds_e/dp`) per scored edge, each from its own reverse sweep.
pub fn mask_jacobian(masknet: &MaskNetParams, graph: &EnrichedGraph) -> Result<Vec<MaskNetParams>> {
    if masknet.input_dim() != graph.base().feature_dim() {
        return Err(Error::Dimension("mask network input dim".into()));
    }
    let mut tape = Tape::new();
    let vars = masknet.on_tape(&mut tape, true);
    let x = tape.constant(graph.base().features().clone());
    let mask = mask_on_tape(&mut tape, &vars, x, graph);
    let m = graph.scored_len();
    let mut rows = Vec::with_capacity(m);
    for e in 0..m {
        let mut seed = Array2::zeros((m, 1));
        seed[[e, 0]] = 1.0;
        let grads = tape.backward_with_seed(mask.scored, seed);
        rows.push(collect(masknet, &vars.all(), &grads));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub step: f64,
    pub pass: bool,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` with central differences of `loss` around `params`.
/// With `sample_per_tensor = Some(k)` at most `k` coordinates of each tensor
/// are checked, chosen with `rng`.
pub fn finite_diff_check<P, F, R>(
    mut loss: F,
    params: &P,
    analytic: &P,
    h: f64,
    tol: f64,
    sample_per_tensor: Option<usize>,
    rng: &mut R,
) -> FdReport
where
    P: ParamSet,
    F: FnMut(&P) -> f64,
    R: Rng + ?Sized,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let names = params.tensor_names();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let analytic_flat: Vec<Vec<f64>> = analytic
        .tensors()
        .iter()
        .map(|t| t.iter().copied().collect())
        .collect();
    let mut work = params.clone();
    let mut tensors = Vec::with_capacity(sizes.len());
    for (ti, &size) in sizes.iter().enumerate() {
        let coords: Vec<usize> = match sample_per_tensor {
            Some(k) if k < size => {
                let mut v = sample(rng, size, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..size).collect(),
        };
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for &c in &coords {
            let orig = params.tensors()[ti]
                .iter()
                .nth(c)
                .copied()
                .expect("coordinate");
            set_coord(&mut work, ti, c, orig + h);
            let up = loss(&work);
            set_coord(&mut work, ti, c, orig - h);
            let down = loss(&work);
            set_coord(&mut work, ti, c, orig);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic_flat[ti][c];
            max_rel = max_rel.max(relative_error(a, numeric, FD_ABS_FLOOR));
            max_abs = max_abs.max((a - numeric).abs());
        }
        tensors.push(TensorCheck {
            name: names[ti].clone(),
            checked: coords.len(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
        });
    }
    let max_rel_err = tensors.iter().fold(0.0_f64, |m, t| m.max(t.max_rel_err));
    FdReport {
        tensors,
        max_rel_err,
        tol,
        step: h,
        pass: max_rel_err <= tol,
    }
}

fn set_coord<P: ParamSet>(p: &mut P, tensor: usize, coord: usize, v: f64) {
    let mut ts = p.tensors_mut();
    *ts[tensor].iter_mut().nth(coord).expect("coordinate") = v;
}

/// A bare list of tensors, handy for checking standalone functions.
impl ParamSet for Vec<Array2<f64>> {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.iter_mut().collect()
    }

    fn tensor_names(&self) -> Vec<String> {
        (0..self.len()).map(|i| format!("t{i}")).collect()
    }
}
