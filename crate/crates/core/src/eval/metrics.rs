//! Threshold-dependent and threshold-independent binary classifier scores.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no examples to score")]
    Empty,
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("both classes are required")]
    SingleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(EvalError::ScoreOutOfRange(*s));
    }
    Ok(())
}

/// Counts with "predicted positive iff score >= threshold".
pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionMatrix, EvalError> {
    check_inputs(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub mcc: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Sensitivity, specificity, accuracy and Matthews correlation.
/// Any metric whose denominator vanishes is reported as 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    let (tp, fp, tn, fn_) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    let mcc = if factors.contains(&0.0) {
        0.0
    } else {
        (tp * tn - fp * fn_) / factors.iter().product::<f64>().sqrt()
    };
    Ok(Metrics {
        sensitivity: ratio(cm.tp, cm.tp + cm.fn_),
        specificity: ratio(cm.tn, cm.tn + cm.fp),
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        mcc,
    })
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize), EvalError> {
    let pos = labels.iter().filter(|y| **y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the Mann-Whitney rank statistic (ties count 1/2).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // sum of (1-based, tie-averaged) ranks of the positives, doubled to stay integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        // average rank of the block i..=j is (i + j + 2) / 2
        rank_sum_x2 += tied_pos * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u_x2 = rank_sum_x2 - p * (p + 1);
    Ok(u_x2 as f64 / (2 * p * n) as f64)
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct score,
/// sweeping the threshold downward.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, EvalError> {
    check_inputs(scores, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a piecewise-linear curve given in increasing x.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Threshold maximizing MCC over the distinct scores; ties go to the lowest threshold.
pub fn mcc_optimal_threshold(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    check_inputs(scores, labels)?;
    let mut candidates = scores.to_vec();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    candidates.dedup();
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for t in candidates {
        let m = metrics(&confusion(scores, labels, t)?)?.mcc;
        if m > best.0 {
            best = (m, t);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdPolicy {
    /// The configured fixed threshold (default 0.5).
    #[default]
    Fixed,
    /// Maximize MCC on the training scores of each fold.
    MccOpt,
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "mcc-opt" => Ok(Self::MccOpt),
            _ => Err(format!("unknown threshold policy {s:?}")),
        }
    }
}
