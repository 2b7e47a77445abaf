//! Multi-label evaluation: one-vs-rest AUC, macro aggregation, fixed-threshold
//! F1 and per-class threshold-optimized F1.
//!
//! A class is degenerate when its labels are all 0 or all 1. Degenerate
//! classes have no AUC and are left out of every macro average.

use serde::Serialize;

use crate::data::LABEL_CODES;
use crate::error::{Error, Result};

pub const GRID_LEN: usize = 16;

/// Thresholds `0.10, 0.15, …, 0.85`.
pub fn threshold_grid() -> [f64; GRID_LEN] {
    std::array::from_fn(|i| (10 + 5 * i) as f64 / 100.0)
}

/// Scores and binary labels for `n` samples and `c` classes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch {
    scores: Vec<f64>,
    labels: Vec<u8>,
    classes: usize,
}

impl EvalBatch {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, classes: usize) -> Result<Self> {
        if classes == 0 || scores.len() != labels.len() || !scores.len().is_multiple_of(classes) || scores.is_empty() {
            return Err(Error::shape(
                "eval_batch",
                format!("{} scores, {} labels, {classes} classes", scores.len(), labels.len()),
            ));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("eval scores"));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        Ok(Self { scores, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.scores.len() / self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn scores(&self, class: usize) -> Vec<f64> {
        self.scores.iter().skip(class).step_by(self.classes).copied().collect()
    }

    pub fn labels(&self, class: usize) -> Vec<u8> {
        self.labels.iter().skip(class).step_by(self.classes).copied().collect()
    }

    fn degenerate(&self, class: usize) -> bool {
        let pos = self.labels(class).iter().filter(|&&l| l == 1).count();
        pos == 0 || pos == self.len()
    }
}

/// Mann–Whitney AUC via average ranks, or `None` when one side is empty.
pub fn binary_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "binary_auc: length mismatch");
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are doubled so ties stay integral.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u64;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank_sum2 += avg2 * tied_pos;
        i = j + 1;
    }
    let pos = pos as u64;
    let u2 = rank_sum2 - pos * (pos + 1);
    Some(u2 as f64 / 2.0 / (pos * neg as u64) as f64)
}

/// Mean AUC over non-degenerate classes.
pub fn macro_auc(batch: &EvalBatch) -> Result<f64> {
    let aucs: Vec<f64> =
        (0..batch.classes).filter_map(|c| binary_auc(&batch.scores(c), &batch.labels(c))).collect();
    if aucs.is_empty() {
        return Err(Error::Data("every class is degenerate; macro AUC undefined".into()));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Stats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Predicts positive iff `score >= t`. Empty denominators give 0.
pub fn f1_at(scores: &[f64], labels: &[u8], t: f64) -> F1Stats {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= t, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    F1Stats { precision: ratio(tp, tp + fp), recall: ratio(tp, tp + fneg), f1: ratio(2 * tp, 2 * tp + fp + fneg) }
}

/// Best `(threshold, F1)` over the grid; ties go to the lowest threshold.
pub fn best_threshold(scores: &[f64], labels: &[u8]) -> (f64, f64) {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for t in threshold_grid() {
        let f = f1_at(scores, labels, t).f1;
        if f > best.1 {
            best = (t, f);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub code: String,
    pub positives: usize,
    pub auc: Option<f64>,
    pub best_threshold: f64,
    pub best_f1: f64,
    pub f1_at_half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub num_samples: usize,
    pub per_class: Vec<ClassMetrics>,
    pub macro_auc: Option<f64>,
    pub macro_f1opt: Option<f64>,
    pub macro_f1_at_half: Option<f64>,
    pub degenerate_classes: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Per-class thresholds and F1 with their macro means.
pub fn f1opt(batch: &EvalBatch) -> (Vec<(f64, f64)>, Option<f64>) {
    let per: Vec<(f64, f64)> =
        (0..batch.classes).map(|c| best_threshold(&batch.scores(c), &batch.labels(c))).collect();
    let m = mean((0..batch.classes).filter(|&c| !batch.degenerate(c)).map(|c| per[c].1));
    (per, m)
}

pub fn evaluate(batch: &EvalBatch) -> MetricsReport {
    let per_class: Vec<ClassMetrics> = (0..batch.classes)
        .map(|c| {
            let (s, l) = (batch.scores(c), batch.labels(c));
            let (t, f) = best_threshold(&s, &l);
            ClassMetrics {
                class: c,
                code: if batch.classes == LABEL_CODES.len() { LABEL_CODES[c].to_string() } else { format!("L{c}") },
                positives: l.iter().filter(|&&x| x == 1).count(),
                auc: binary_auc(&s, &l),
                best_threshold: t,
                best_f1: f,
                f1_at_half: f1_at(&s, &l, 0.5).f1,
            }
        })
        .collect();
    let live = || per_class.iter().filter(|m| m.auc.is_some());
    MetricsReport {
        num_samples: batch.len(),
        macro_auc: mean(live().filter_map(|m| m.auc)),
        macro_f1opt: mean(live().map(|m| m.best_f1)),
        macro_f1_at_half: mean(live().map(|m| m.f1_at_half)),
        degenerate_classes: per_class.iter().filter(|m| m.auc.is_none()).count(),
        per_class,
    }
}
