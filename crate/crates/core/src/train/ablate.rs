//! Evaluation protocols and ablation grids.

use serde::{Deserialize, Serialize};

use super::{evaluate, final_mean_mask, train, DomainMetrics, InferenceMask, Metrics, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Which graphs train and which are held out.
#[derive(Debug, Clone, Copy)]
pub enum Split<'a> {
    /// Train on `sources`, evaluate on `target`.
    Fixed {
        sources: &'a [Graph],
        target: &'a Graph,
    },
    /// One run per domain, holding that domain out.
    LeaveOneOut(&'a [Graph]),
}

impl<'a> Split<'a> {
    fn scenarios(&self) -> Result<Vec<(Vec<Graph>, &'a Graph)>> {
        match *self {
            Split::Fixed { sources, target } => Ok(vec![(sources.to_vec(), target)]),
            Split::LeaveOneOut(domains) => {
                if domains.len() < 2 {
                    return Err(Error::Config(
                        "leave-one-out needs at least two domains".into(),
                    ));
                }
                Ok((0..domains.len())
                    .map(|i| {
                        let sources = domains
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != i)
                            .map(|(_, g)| g.clone())
                            .collect();
                        (sources, &domains[i])
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    /// Held-out scores under the configured inference mask.
    pub metrics: DomainMetrics,
    /// Held-out scores under the learned mask, when there is one.
    pub masknet_metrics: Option<DomainMetrics>,
    /// Mean mask over the fully enriched training graphs.
    pub final_mean_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub runs: Vec<RunResult>,
    pub summary: Metrics,
    pub mean_final_s: f64,
}

/// Trains once per scenario of `split` and scores the held-out graph.
pub fn run_split(split: Split<'_>, cfg: &TrainConfig) -> Result<SplitResult> {
    let mut runs = Vec::new();
    for (sources, target) in split.scenarios()? {
        let out = train(&sources, cfg)?;
        let metrics = evaluate(&out.model, target, cfg, cfg.inference_mask)?;
        let masknet_metrics = match out.model.mask {
            Some(_) => Some(evaluate(&out.model, target, cfg, InferenceMask::Masknet)?),
            None => None,
        };
        let final_mean_s = final_mean_mask(&out.model, &sources, cfg)?;
        runs.push(RunResult {
            seed: cfg.seed,
            metrics,
            masknet_metrics,
            final_mean_s,
        });
    }
    let summary = Metrics::from_domains(runs.iter().map(|r| r.metrics.clone()).collect());
    let mean_final_s = runs.iter().map(|r| r.final_mean_s).sum::<f64>() / runs.len() as f64;
    Ok(SplitResult {
        runs,
        summary,
        mean_final_s,
    })
}

pub fn leave_one_out(domains: &[Graph], cfg: &TrainConfig) -> Result<SplitResult> {
    run_split(Split::LeaveOneOut(domains), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub worst_micro_f1: f64,
    pub final_mean_s: f64,
}

/// One run per sparsity coefficient, all sharing `cfg.seed`.
pub fn ablate_lambda(split: Split<'_>, cfg: &TrainConfig, grid: &[f64]) -> Result<Vec<LambdaRow>> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    grid.iter()
        .map(|&lambda| {
            let c = TrainConfig {
                lambda,
                ..cfg.clone()
            };
            let r = run_split(split, &c)?;
            Ok(LambdaRow {
                lambda,
                micro_f1: r.summary.average.micro_f1,
                macro_f1: r.summary.average.macro_f1,
                worst_micro_f1: r.summary.worst.micro_f1,
                final_mean_s: r.mean_final_s,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `original` or `union`.
    pub edges: String,
    pub mask: bool,
    /// Mean held-out scores over seeds and scenarios.
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Mean held-out micro-F1 of each seed.
    pub micro_f1_per_seed: Vec<f64>,
}

/// {original, union} x {no mask, mask}, each over the same seeds.
pub fn ablate_2x2(split: Split<'_>, cfg: &TrainConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let mut rows = Vec::with_capacity(4);
    for (edges, base) in [("original", cfg.original_edges()), ("union", cfg.clone())] {
        for mask in [false, true] {
            let mut micro = Vec::with_capacity(seeds.len());
            let mut macro_ = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let c = TrainConfig {
                    seed,
                    use_mask: mask,
                    ..base.clone()
                };
                let r = run_split(split, &c)?;
                micro.push(r.summary.average.micro_f1);
                macro_.push(r.summary.average.macro_f1);
            }
            let n = seeds.len() as f64;
            rows.push(AblationRow {
                edges: edges.into(),
                mask,
                micro_f1: micro.iter().sum::<f64>() / n,
                macro_f1: macro_.iter().sum::<f64>() / n,
                micro_f1_per_seed: micro,
            });
        }
    }
    Ok(rows)
}

/// Plain-text rendering of a 2x2 ablation.
pub fn format_2x2(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<10} {:<8} {:>9} {:>9}\n",
        "edges", "mask", "micro-F1", "macro-F1"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:<8} {:>9.4} {:>9.4}\n",
            r.edges,
            if r.mask { "yes" } else { "no" },
            r.micro_f1,
            r.macro_f1
        ));
    }
    out
}

pub fn format_lambda(rows: &[LambdaRow]) -> String {
    let mut out = format!(
        "{:>10} {:>9} {:>9} {:>11} {:>8}\n",
        "lambda", "micro-F1", "macro-F1", "worst-micro", "mean(s)"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>10.1e} {:>9.4} {:>9.4} {:>11.4} {:>8.4}\n",
            r.lambda, r.micro_f1, r.macro_f1, r.worst_micro_f1, r.final_mean_s
        ));
    }
    out
}
