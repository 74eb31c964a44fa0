//! ROC AUC via the Mann–Whitney rank statistic, a trapezoidal ROC
//! integration used as a cross-check, and relative AUC-error reduction.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUC undefined for class {class:?}: {positives} positives, {negatives} negatives")]
    UndefinedAuc {
        class: String,
        positives: usize,
        negatives: usize,
    },
    #[error("score and label lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("AUC {0} outside [0, 1]")]
    AucOutOfRange(f64),
    #[error("better model has zero AUC error; reduction is infinite")]
    InfiniteReduction,
    #[error("example has {got} scores, expected {expected}")]
    ScoreWidth { expected: usize, got: usize },
}

/// Class probabilities for one test example plus its true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub scores: Vec<f64>,
    pub truth: usize,
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

fn undefined(pos: usize, neg: usize) -> MetricError {
    MetricError::UndefinedAuc {
        class: String::new(),
        positives: pos,
        negatives: neg,
    }
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting
/// one half, computed from midranks in `O(n log n)`.
pub fn auc_rank(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (pos, neg) = check_lengths(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(undefined(pos, neg));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, kept integral.
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].total_cmp(&scores[order[i]]) == Ordering::Equal {
            j += 1;
        }
        // Ranks i+1..=j+1 share the midrank (i + j + 2) / 2.
        let midrank_x2 = (i + j + 2) as u64;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        rank_sum_x2 += midrank_x2 * tied_pos;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * n) as f64)
}

/// Area under the empirical ROC curve by the trapezoid rule, with tied
/// scores forming a single diagonal step.
pub fn auc_trapezoid(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (pos, neg) = check_lengths(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(undefined(pos, neg));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one (positive, negative) cell.
    let mut area_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let mut j = i;
        loop {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            if j + 1 < order.len() && scores[order[j + 1]].total_cmp(&scores[order[i]]) == Ordering::Equal {
                j += 1;
            } else {
                break;
            }
        }
        area_x2 += (fp - fp0) * (tp + tp0);
        i = j + 1;
    }
    Ok(area_x2 as f64 / (2 * pos as u64 * neg as u64) as f64)
}

/// Per-class one-vs-rest AUCs and their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAuc {
    pub per_class: Vec<(String, f64)>,
    pub mean: f64,
}

pub fn auc_roc_macro(scored: &[ScoredExample], classes: &[String]) -> Result<MacroAuc, MetricError> {
    let c = classes.len();
    if let Some(bad) = scored.iter().find(|e| e.scores.len() != c) {
        return Err(MetricError::ScoreWidth {
            expected: c,
            got: bad.scores.len(),
        });
    }
    let mut per_class = Vec::with_capacity(c);
    for (ci, name) in classes.iter().enumerate() {
        let scores: Vec<f64> = scored.iter().map(|e| e.scores[ci]).collect();
        let labels: Vec<bool> = scored.iter().map(|e| e.truth == ci).collect();
        let auc = auc_rank(&scores, &labels).map_err(|e| match e {
            MetricError::UndefinedAuc {
                positives, negatives, ..
            } => MetricError::UndefinedAuc {
                class: name.clone(),
                positives,
                negatives,
            },
            other => other,
        })?;
        per_class.push((name.clone(), auc));
    }
    let mean = per_class.iter().map(|(_, a)| a).sum::<f64>() / c.max(1) as f64;
    Ok(MacroAuc { per_class, mean })
}

/// How much lower the better model's AUC error (`1 - AUC`) is, in percent of
/// its own error: `((1 - worse) - (1 - better)) / (1 - better) * 100`.
pub fn error_reduction(auc_better: f64, auc_worse: f64) -> Result<f64, MetricError> {
    for a in [auc_better, auc_worse] {
        if !(0.0..=1.0).contains(&a) {
            return Err(MetricError::AucOutOfRange(a));
        }
    }
    let better_err = 1.0 - auc_better;
    if better_err == 0.0 {
        return Err(MetricError::InfiniteReduction);
    }
    Ok(((1.0 - auc_worse) - better_err) / better_err * 100.0)
}
