//! Executable checks of the mask problem's optimality theory.
//!
//! The inner problem for a fixed classifier is
//!
//! ```text
//! P      = max  l(s)                      over s in [0,1]^m, mean(s) <= rho
//! D(lam) = max  l(s) - lam (mean(s) - rho) over s in [0,1]^m
//! ```
//!
//! with `P <= D(lam)` for every `lam >= 0`. For the affine surrogate
//! `l(s) = l0 + c.s` both sides have closed forms.

use serde::Serialize;

use crate::enrich::EnrichedGraph;
use crate::error::{Error, Result};
use crate::grad::{grad_masknet, loss_and_mask_gradient, loss_at_mask, mask_jacobian};
use crate::masknet::{mask_forward, MaskNetParams};
use crate::params::ParamSet;
use crate::tasknet::{TaskNetConfig, TaskNetParams};

/// Loss as a function of the scored mask entries.
pub trait MaskLoss {
    fn num_edges(&self) -> usize;
    fn value(&self, s: &[f64]) -> Result<f64>;
    fn gradient(&self, s: &[f64]) -> Result<Vec<f64>>;
}

/// `l(s) = base + c.s`
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineLoss {
    pub base: f64,
    pub c: Vec<f64>,
}

impl MaskLoss for AffineLoss {
    fn num_edges(&self) -> usize {
        self.c.len()
    }

    fn value(&self, s: &[f64]) -> Result<f64> {
        check_len(s, self.c.len())?;
        Ok(self.base + self.c.iter().zip(s).map(|(c, s)| c * s).sum::<f64>())
    }

    fn gradient(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len(s, self.c.len())?;
        Ok(self.c.clone())
    }
}

/// Cross-entropy of a fixed classifier on a fixed graph.
pub struct TaskNetLoss<'a> {
    pub task: &'a TaskNetParams,
    pub cfg: &'a TaskNetConfig,
    pub graph: &'a EnrichedGraph,
}

impl MaskLoss for TaskNetLoss<'_> {
    fn num_edges(&self) -> usize {
        self.graph.scored_len()
    }

    fn value(&self, s: &[f64]) -> Result<f64> {
        loss_at_mask(self.task, self.cfg, self.graph, s)
    }

    fn gradient(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(loss_and_mask_gradient(self.task, self.cfg, self.graph, s)?.1)
    }
}

fn check_len(s: &[f64], m: usize) -> Result<()> {
    if s.len() == m {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "mask has {} entries, expected {m}",
            s.len()
        )))
    }
}

/// Affine surrogate of the loss around `s = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurrogateProblem {
    /// `dl/ds_e` at `s = 0`.
    pub c: Vec<f64>,
    pub base_loss: f64,
    /// Per-edge penalty `lambda / m`.
    pub tau: f64,
    pub rho: f64,
}

impl SurrogateProblem {
    pub fn new(c: Vec<f64>, base_loss: f64, tau: f64, rho: f64) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::Config("surrogate needs at least one edge".into()));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")));
        }
        if !base_loss.is_finite() || !tau.is_finite() || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: "surrogate coefficients".into(),
            });
        }
        Ok(SurrogateProblem {
            c,
            base_loss,
            tau,
            rho,
        })
    }

    /// Linearises `loss` at the zero mask.
    pub fn from_loss(loss: &dyn MaskLoss, lambda: f64, rho: f64) -> Result<Self> {
        let zero = vec![0.0; loss.num_edges()];
        let m = zero.len() as f64;
        Self::new(loss.gradient(&zero)?, loss.value(&zero)?, lambda / m, rho)
    }

    pub fn m(&self) -> usize {
        self.c.len()
    }

    pub fn loss(&self) -> AffineLoss {
        AffineLoss {
            base: self.base_loss,
            c: self.c.clone(),
        }
    }

    /// `l0 + sum_e (c_e - tau) s_e`
    pub fn penalized(&self, s: &[f64]) -> f64 {
        self.base_loss
            + self
                .c
                .iter()
                .zip(s)
                .map(|(c, s)| (c - self.tau) * s)
                .sum::<f64>()
    }

    /// Surrogate dual `l0 + lam rho + sum_e max(c_e - lam/m, 0)`.
    pub fn dual(&self, lambda: f64) -> f64 {
        let t = lambda / self.m() as f64;
        self.base_loss + lambda * self.rho + self.c.iter().map(|c| (c - t).max(0.0)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurrogateSolution {
    pub mask: Vec<f64>,
    pub value: f64,
}

/// Maximiser of the penalised surrogate: `s_e = 1[c_e > tau]`, ties to 0.
pub fn surrogate_optimal_mask(prob: &SurrogateProblem) -> SurrogateSolution {
    let mask: Vec<f64> = prob
        .c
        .iter()
        .map(|&c| if c > prob.tau { 1.0 } else { 0.0 })
        .collect();
    let value = prob.base_loss + prob.c.iter().map(|c| (c - prob.tau).max(0.0)).sum::<f64>();
    SurrogateSolution { mask, value }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstrainedSolution {
    pub mask: Vec<f64>,
    pub value: f64,
    /// Optimal multiplier of the budget.
    pub lambda: f64,
}

/// Budget-constrained surrogate optimum (a fractional knapsack) and the
/// multiplier that certifies it.
pub fn surrogate_constrained(prob: &SurrogateProblem) -> ConstrainedSolution {
    let m = prob.m();
    let mut order: Vec<usize> = (0..m).filter(|&e| prob.c[e] > 0.0).collect();
    order.sort_by(|&a, &b| prob.c[b].total_cmp(&prob.c[a]).then(a.cmp(&b)));
    let budget = prob.rho * m as f64;
    let mut mask = vec![0.0; m];
    let lambda;
    if order.len() as f64 <= budget {
        for &e in &order {
            mask[e] = 1.0;
        }
        lambda = 0.0;
    } else {
        let full = budget.floor() as usize;
        let rest = budget - full as f64;
        for &e in &order[..full] {
            mask[e] = 1.0;
        }
        if rest > 0.0 {
            let e = order[full];
            mask[e] = rest;
            lambda = m as f64 * prob.c[e];
        } else {
            lambda = m as f64 * prob.c[order[full]].max(0.0);
        }
    }
    let value = prob.base_loss + prob.c.iter().zip(&mask).map(|(c, s)| c * s).sum::<f64>();
    ConstrainedSolution {
        mask,
        value,
        lambda,
    }
}

/// Points of the uniform grid `{0, step, ..., 1}^m`.
pub struct Grid {
    levels: usize,
    m: usize,
}

pub const DEFAULT_GRID_CAP: u128 = 20_000_000;

/// Finest step that keeps a grid over `m` real-loss coordinates near
/// twenty thousand points: 0.05 up to three edges, then 0.1, 0.2 and 0.25.
pub fn default_grid_step(m: usize) -> f64 {
    match m {
        0..=3 => 0.05,
        4 => 0.1,
        5 => 0.2,
        _ => 0.25,
    }
}

impl Grid {
    pub fn new(m: usize, step: f64, cap: u128) -> Result<Self> {
        let inv = 1.0 / step;
        if !(step > 0.0 && step <= 1.0) || (inv - inv.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "grid step must divide 1, got {step}"
            )));
        }
        let levels = inv.round() as usize + 1;
        let points = (levels as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
        if points > cap {
            return Err(Error::GridTooLarge { points, cap });
        }
        Ok(Grid { levels, m })
    }

    pub fn len(&self) -> usize {
        self.levels.pow(self.m as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Calls `f` on every point in lexicographic order.
    pub fn for_each<E>(
        &self,
        mut f: impl FnMut(&[f64]) -> std::result::Result<(), E>,
    ) -> std::result::Result<(), E> {
        let scale = (self.levels - 1) as f64;
        let mut idx = vec![0usize; self.m];
        let mut s = vec![0.0; self.m];
        loop {
            for (v, &i) in s.iter_mut().zip(&idx) {
                *v = i as f64 / scale;
            }
            f(&s)?;
            let mut k = 0;
            loop {
                if k == self.m {
                    return Ok(());
                }
                idx[k] += 1;
                if idx[k] < self.levels {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

/// Largest penalised surrogate value on a grid.
pub fn surrogate_grid_max(prob: &SurrogateProblem, step: f64) -> Result<(f64, Vec<f64>)> {
    let grid = Grid::new(prob.m(), step, DEFAULT_GRID_CAP)?;
    let mut best = (f64::NEG_INFINITY, Vec::new());
    grid.for_each::<()>(|s| {
        let v = prob.penalized(s);
        if v > best.0 {
            best = (v, s.to_vec());
        }
        Ok(())
    })
    .expect("infallible");
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualRow {
    pub lambda: f64,
    pub dual: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualBoundReport {
    pub points: usize,
    pub primal: f64,
    pub primal_argmax: Vec<f64>,
    pub rows: Vec<DualRow>,
    pub tol: f64,
    pub holds: bool,
}

/// Grid estimates of `P` and of `D(lam)` for every `lam` in `lambdas`.
/// The loss is evaluated once per grid point.
pub fn dual_upper_bound(
    loss: &dyn MaskLoss,
    lambdas: &[f64],
    rho: f64,
    step: f64,
    tol: f64,
    cap: u128,
) -> Result<DualBoundReport> {
    if let Some(&l) = lambdas.iter().find(|&&l| l.is_nan() || l < 0.0) {
        return Err(Error::Config(format!(
            "multipliers must be non-negative, got {l}"
        )));
    }
    let m = loss.num_edges();
    if m == 0 {
        return Err(Error::Config("no scored edges".into()));
    }
    let grid = Grid::new(m, step, cap)?;
    let mut primal = f64::NEG_INFINITY;
    let mut primal_argmax = Vec::new();
    let mut duals = vec![f64::NEG_INFINITY; lambdas.len()];
    grid.for_each(|s| {
        let v = loss.value(s)?;
        let mean = s.iter().sum::<f64>() / m as f64;
        if mean <= rho + 1e-12 && v > primal {
            primal = v;
            primal_argmax = s.to_vec();
        }
        for (d, &l) in duals.iter_mut().zip(lambdas) {
            *d = d.max(v - l * (mean - rho));
        }
        Ok::<(), Error>(())
    })?;
    let rows: Vec<DualRow> = lambdas
        .iter()
        .zip(duals)
        .map(|(&lambda, dual)| DualRow {
            lambda,
            dual,
            holds: primal <= dual + tol,
        })
        .collect();
    Ok(DualBoundReport {
        points: grid.len(),
        primal,
        primal_argmax,
        holds: rows.iter().all(|r| r.holds),
        rows,
        tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KktCase {
    Zero,
    Interior,
    One,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeKkt {
    pub case: KktCase,
    pub s: f64,
    /// `dl/ds_e`
    pub gradient: f64,
    pub mu: f64,
    pub nu: f64,
    /// Violation of this edge's case condition (0 when satisfied exactly).
    pub residual: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktCertificate {
    pub lambda: f64,
    pub rho: f64,
    pub mean_s: f64,
    pub edges: Vec<EdgeKkt>,
    pub stationarity_ok: bool,
    pub feasible: bool,
    /// `lambda * (mean(s) - rho)`
    pub slackness_residual: f64,
    pub slackness_ok: bool,
    pub tol: f64,
    pub pass: bool,
}

/// Edges whose value is within this distance of 0 or 1 count as bound.
const BOUND_EPS: f64 = 1e-12;

/// Checks first-order conditions of `s` for the budgeted problem with
/// multiplier `lambda`. Local conditions only.
pub fn kkt_check(
    loss: &dyn MaskLoss,
    s: &[f64],
    lambda: f64,
    rho: f64,
    tol: f64,
) -> Result<KktCertificate> {
    let m = loss.num_edges();
    check_len(s, m)?;
    if m == 0 {
        return Err(Error::Config("no scored edges".into()));
    }
    let g = loss.gradient(s)?;
    let t = lambda / m as f64;
    let edges: Vec<EdgeKkt> = s
        .iter()
        .zip(&g)
        .map(|(&s, &g)| {
            let (case, residual) = if s <= BOUND_EPS {
                (KktCase::Zero, (g - t).max(0.0))
            } else if s >= 1.0 - BOUND_EPS {
                (KktCase::One, (t - g).max(0.0))
            } else {
                (KktCase::Interior, (g - t).abs())
            };
            let mu = if case == KktCase::One {
                (g - t).max(0.0)
            } else {
                0.0
            };
            let nu = if case == KktCase::Zero {
                (t - g).max(0.0)
            } else {
                0.0
            };
            EdgeKkt {
                case,
                s,
                gradient: g,
                mu,
                nu,
                residual,
                ok: residual <= tol,
            }
        })
        .collect();
    let mean_s = s.iter().sum::<f64>() / m as f64;
    let feasible =
        lambda >= 0.0 && s.iter().all(|v| (0.0..=1.0).contains(v)) && mean_s <= rho + tol;
    let slackness_residual = lambda * (mean_s - rho);
    let stationarity_ok = edges.iter().all(|e| e.ok);
    let slackness_ok = slackness_residual.abs() <= tol;
    Ok(KktCertificate {
        lambda,
        rho,
        mean_s,
        stationarity_ok,
        feasible,
        slackness_residual,
        slackness_ok,
        pass: stationarity_ok && feasible && slackness_ok,
        edges,
        tol,
    })
}

/// Certificate for the penalised surrogate optimum: `s* = 1[c > tau]`,
/// `lambda* = m tau` and the budget set to `mean(s*)`.
pub fn surrogate_certificate(prob: &SurrogateProblem, tol: f64) -> Result<KktCertificate> {
    let sol = surrogate_optimal_mask(prob);
    let m = prob.m() as f64;
    let rho = sol.mask.iter().sum::<f64>() / m;
    kkt_check(&prob.loss(), &sol.mask, m * prob.tau, rho, tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub lambda: f64,
    pub scored_edges: usize,
    pub max_abs_deviation: f64,
    /// Largest entry of the direct gradient, for scale.
    pub max_abs_gradient: f64,
}

/// Mask-network gradient of `-CE + lambda mean(s)` computed directly and as
/// `(-dCE/ds + lambda/m) ds/dp` from separately computed factors.
pub fn masknet_gradient_identity(
    task: &TaskNetParams,
    masknet: &MaskNetParams,
    cfg: &TaskNetConfig,
    graph: &EnrichedGraph,
    lambda: f64,
) -> Result<IdentityReport> {
    let direct = grad_masknet(task, masknet, cfg, graph, lambda, None)?
        .mask
        .expect("mask gradients");
    let s = mask_forward(masknet, graph)?;
    let (_, g) = loss_and_mask_gradient(task, cfg, graph, s.scored())?;
    let jac = mask_jacobian(masknet, graph)?;
    let m = graph.scored_len() as f64;
    let mut composed = masknet.zeros_like();
    for (row, ge) in jac.iter().zip(&g) {
        let q = -ge + lambda / m;
        for (acc, r) in composed.tensors_mut().into_iter().zip(row.tensors()) {
            acc.scaled_add(q, r);
        }
    }
    let max_abs_deviation = direct
        .flatten()
        .iter()
        .zip(composed.flatten())
        .fold(0.0_f64, |d, (a, b)| d.max((a - b).abs()));
    Ok(IdentityReport {
        lambda,
        scored_edges: graph.scored_len(),
        max_abs_deviation,
        max_abs_gradient: direct.max_abs(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleEdgeSign {
    /// `-dCE/ds + lambda`
    pub q: f64,
    /// `ds/d(out_bias) = s (1 - s)`
    pub ds_dbias: f64,
    /// Change of `s` after a small descent step on the output bias alone.
    pub delta_s: f64,
    pub consistent: bool,
}

/// On a graph with one scored edge, a descent step on the mask objective
/// through the output bias moves `s` against the sign of `Q`.
pub fn single_edge_sign(
    task: &TaskNetParams,
    masknet: &MaskNetParams,
    cfg: &TaskNetConfig,
    graph: &EnrichedGraph,
    lambda: f64,
    step: f64,
) -> Result<SingleEdgeSign> {
    if graph.scored_len() != 1 {
        return Err(Error::Config(
            "single-edge check needs exactly one scored edge".into(),
        ));
    }
    let s0 = mask_forward(masknet, graph)?.scored()[0];
    let (_, g) = loss_and_mask_gradient(task, cfg, graph, &[s0])?;
    let q = -g[0] + lambda;
    let jac = mask_jacobian(masknet, graph)?;
    let ds_dbias = jac[0].out_bias[[0, 0]];
    let bundle = grad_masknet(task, masknet, cfg, graph, lambda, None)?;
    let gb = bundle.mask.expect("mask gradients").out_bias[[0, 0]];
    let mut moved = masknet.clone();
    moved.out_bias[[0, 0]] -= step * gb;
    let delta_s = mask_forward(&moved, graph)?.scored()[0] - s0;
    let consistent = ds_dbias >= 0.0 && (q == 0.0 || delta_s * q < 0.0);
    Ok(SingleEdgeSign {
        q,
        ds_dbias,
        delta_s,
        consistent,
    })
}
