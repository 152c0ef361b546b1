use serde::{Deserialize, Serialize};

use crate::enrich::EnrichedGraph;
use crate::masknet::EdgeMask;

/// Scores on one domain, over its labeled nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub domain: String,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub evaluated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub domains: Vec<DomainMetrics>,
    pub average: Aggregate,
    /// Per-field minimum over domains.
    pub worst: Aggregate,
}

impl Metrics {
    pub fn from_domains(domains: Vec<DomainMetrics>) -> Self {
        assert!(!domains.is_empty(), "no domains to aggregate");
        let n = domains.len() as f64;
        let sum = |f: fn(&DomainMetrics) -> f64| domains.iter().map(f).sum::<f64>() / n;
        let min =
            |f: fn(&DomainMetrics) -> f64| domains.iter().map(f).fold(f64::INFINITY, f64::min);
        let average = Aggregate {
            micro_f1: sum(|d| d.micro_f1),
            macro_f1: sum(|d| d.macro_f1),
            accuracy: sum(|d| d.accuracy),
        };
        let worst = Aggregate {
            micro_f1: min(|d| d.micro_f1),
            macro_f1: min(|d| d.macro_f1),
            accuracy: min(|d| d.accuracy),
        };
        Metrics {
            domains,
            average,
            worst,
        }
    }
}

/// `(micro_f1, macro_f1, accuracy)` over paired predictions and labels.
/// Classes absent from both contribute an F1 of 0 to the macro average.
pub fn f1_scores(pred: &[usize], truth: &[usize], classes: usize) -> (f64, f64, f64) {
    assert_eq!(pred.len(), truth.len());
    assert!(!pred.is_empty(), "nothing to score");
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let accuracy = correct as f64 / pred.len() as f64;
    let macro_f1 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum::<f64>()
        / classes as f64;
    (accuracy, macro_f1, accuracy)
}

/// Share of edges the mask would drop at `threshold`, split by provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub threshold: f64,
    pub original_edges: usize,
    pub augmented_edges: usize,
    /// `None` when there are no edges of that kind.
    pub pruned_original_pct: Option<f64>,
    pub pruned_augmented_pct: Option<f64>,
    pub retained_augmented_pct: Option<f64>,
}

pub fn mask_statistics(graph: &EnrichedGraph, mask: &EdgeMask, threshold: f64) -> MaskStats {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "threshold must lie in (0, 1)"
    );
    assert_eq!(mask.len(), graph.num_edges(), "mask length vs edge count");
    let (mut orig, mut orig_pruned, mut aug, mut aug_pruned) = (0usize, 0usize, 0usize, 0usize);
    for (e, &s) in graph.edges()[..graph.scored_len()]
        .iter()
        .zip(mask.scored())
    {
        let pruned = usize::from(s < threshold);
        if e.origin.is_augmented() {
            aug += 1;
            aug_pruned += pruned;
        } else {
            orig += 1;
            orig_pruned += pruned;
        }
    }
    let pct = |a: usize, b: usize| (b > 0).then(|| 100.0 * a as f64 / b as f64);
    let pruned_augmented_pct = pct(aug_pruned, aug);
    MaskStats {
        threshold,
        original_edges: orig,
        augmented_edges: aug,
        pruned_original_pct: pct(orig_pruned, orig),
        pruned_augmented_pct,
        retained_augmented_pct: pruned_augmented_pct.map(|p| 100.0 - p),
    }
}
