//! Classification and ranking metrics: accuracy, macro/micro F1, ROC AUC and
//! hit ratio at K.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::HitRatioCase;

/// Probabilities strictly above this are predicted positive.
pub const THRESHOLD: f64 = 0.5;

pub fn classify(probabilities: &[f64]) -> Vec<bool> {
    probabilities.iter().map(|&p| p > THRESHOLD).collect()
}

fn check_lengths(preds: &[bool], labels: &[bool]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} predictions, {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("metrics"));
    }
    Ok(())
}

pub fn accuracy(preds: &[bool], labels: &[bool]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
}

impl Confusion {
    fn new(preds: &[bool], labels: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in preds.iter().zip(labels) {
            match (p, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// Swaps the roles of the two classes.
    fn flipped(self) -> Self {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

/// `2tp / (2tp + fp + fn)`, defined as 0 when the denominator vanishes.
fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Returns `(macro_f1, micro_f1)` over the classes {0, 1}.
///
/// Micro F1 pools true positives, false positives and false negatives across
/// both classes. Every error is a false positive for one class and a false
/// negative for the other, so micro F1 reduces to accuracy.
pub fn f1_scores(preds: &[bool], labels: &[bool]) -> Result<(f64, f64)> {
    check_lengths(preds, labels)?;
    let pos = Confusion::new(preds, labels);
    let neg = pos.flipped();
    let macro_f1 = (f1(pos.tp, pos.fp, pos.fn_) + f1(neg.tp, neg.fp, neg.fn_)) / 2.0;
    let micro_f1 = f1(pos.tp + neg.tp, pos.fp + neg.fp, pos.fn_ + neg.fn_);
    Ok((macro_f1, micro_f1))
}

/// Area under the ROC curve from the Mann-Whitney rank statistic.
///
/// Tied scores receive their average rank, which counts each tied
/// positive/negative pair as one half. The numerator is accumulated in
/// half-units so the result is the exact pair-count ratio.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the positive rank sum, using 1-based average ranks per tie group.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Average of ranks i+1..=j, doubled: (i + 1 + j).
        let doubled_rank = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        doubled_rank_sum += doubled_rank * positives;
        i = j;
    }
    let p = n_pos as u128;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// 1-based position of the held-out code when candidates are ordered by
/// descending score, ties broken by ascending code index.
pub fn held_out_rank(case: &HitRatioCase, scores: &[f64]) -> Result<usize> {
    if scores.len() != case.candidates.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} candidates",
            scores.len(),
            case.candidates.len()
        )));
    }
    let pos = case
        .candidates
        .iter()
        .position(|&c| c == case.held_out)
        .ok_or_else(|| Error::Metric("held-out code missing from candidates".into()))?;
    let target = scores[pos];
    let ahead = case
        .candidates
        .iter()
        .zip(scores)
        .filter(|&(&c, &s)| s > target || (s == target && c < case.held_out))
        .count();
    Ok(ahead + 1)
}

/// Fraction of cases whose held-out code ranks within the top `k`.
///
/// `scorer` maps (subject, candidate codes) to one score per candidate.
pub fn hit_ratio_at_k<F>(cases: &[HitRatioCase], mut scorer: F, k: usize) -> Result<f64>
where
    F: FnMut(usize, &[usize]) -> Result<Vec<f64>>,
{
    if cases.is_empty() {
        return Err(Error::EmptyInput("metrics: hit ratio"));
    }
    let mut hits = 0;
    for case in cases {
        if k > case.candidates.len() {
            return Err(Error::Metric(format!(
                "k = {k} exceeds {} candidates",
                case.candidates.len()
            )));
        }
        let scores = scorer(case.subject, &case.candidates)?;
        if held_out_rank(case, &scores)? <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / cases.len() as f64)
}

/// Metrics for one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// `None` when the split holds a single class.
    pub auc: Option<f64>,
    /// `None` when no hit-ratio cases were evaluated for this split.
    pub hit_ratio_at_k: Option<f64>,
    pub k: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_cases: usize,
}

impl EvalReport {
    /// Threshold metrics and AUC from probabilities. Hit ratio is attached
    /// separately with [`EvalReport::with_hit_ratio`].
    pub fn from_scores(probabilities: &[f64], labels: &[bool], k: usize) -> Result<Self> {
        let preds = classify(probabilities);
        let accuracy = accuracy(&preds, labels)?;
        let (macro_f1, micro_f1) = f1_scores(&preds, labels)?;
        let auc = match roc_auc(probabilities, labels) {
            Ok(a) => Some(a),
            Err(Error::AucUndefined) => None,
            Err(e) => return Err(e),
        };
        let n_pos = labels.iter().filter(|&&y| y).count();
        Ok(EvalReport {
            accuracy,
            macro_f1,
            micro_f1,
            auc,
            hit_ratio_at_k: None,
            k,
            n_pos,
            n_neg: labels.len() - n_pos,
            n_cases: 0,
        })
    }

    pub fn with_hit_ratio(mut self, hit_ratio: f64, n_cases: usize) -> Self {
        self.hit_ratio_at_k = Some(hit_ratio);
        self.n_cases = n_cases;
        self
    }
}
