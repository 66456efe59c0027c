//! Softmax, weighted categorical cross-entropy and the evaluation suite.
//!
//! Multiclass metrics are computed one-vs-rest per class and macro-averaged
//! (unweighted mean over classes). Ratios with a zero denominator are
//! reported as 0 and flagged in `undefined`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower clip applied to probabilities inside the logarithm.
pub const LOG_CLIP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("non-finite logit at position {0}")]
    NonFinite(usize),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("class {0} has no positive or no negative samples")]
    DegenerateClass(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the hot entry of a one-hot target vector.
pub fn one_hot_index(target: &[f64]) -> Result<usize> {
    let hot: Vec<usize> = target
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != 0.0)
        .map(|(i, _)| i)
        .collect();
    match hot.as_slice() {
        [i] if target[*i] == 1.0 => Ok(*i),
        _ => Err(MetricsError::InvalidTarget(format!("{target:?} is not one-hot"))),
    }
}

fn check_targets(targets: &[usize], num_classes: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != num_classes {
        return Err(MetricsError::LengthMismatch(weights.len(), num_classes));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(MetricsError::InvalidTarget(format!("class weight {w} is not positive")));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= num_classes) {
        return Err(MetricsError::InvalidTarget(format!(
            "class {t} out of range for {num_classes} classes"
        )));
    }
    Ok(())
}

/// Batch-mean weighted cross-entropy of row-major probabilities
/// (`targets.len()` rows of `weights.len()` classes).
pub fn weighted_cross_entropy(probs: &[f64], targets: &[usize], weights: &[f64]) -> Result<f64> {
    let c = weights.len();
    check_targets(targets, c, weights)?;
    if probs.len() != targets.len() * c {
        return Err(MetricsError::LengthMismatch(probs.len(), targets.len() * c));
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(n, &t)| -weights[t] * probs[n * c + t].max(LOG_CLIP).ln())
        .sum();
    Ok(total / targets.len() as f64)
}

/// Weighted cross-entropy on logits: returns the batch-mean loss, the
/// softmax probabilities and `∂loss/∂logits = w(t)·(p − onehot(t)) / batch`.
pub fn wce_loss(logits: &[f64], targets: &[usize], weights: &[f64]) -> Result<WceOutput> {
    let c = weights.len();
    check_targets(targets, c, weights)?;
    if logits.len() != targets.len() * c {
        return Err(MetricsError::LengthMismatch(logits.len(), targets.len() * c));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let batch = targets.len();
    let mut probs = Vec::with_capacity(logits.len());
    let mut grad = Vec::with_capacity(logits.len());
    let mut total = 0.0;
    for (n, &t) in targets.iter().enumerate() {
        let p = softmax_unchecked(&logits[n * c..(n + 1) * c]);
        total -= weights[t] * p[t].max(LOG_CLIP).ln();
        for (j, &pj) in p.iter().enumerate() {
            let onehot = if j == t { 1.0 } else { 0.0 };
            grad.push(weights[t] * (pj - onehot) / batch as f64);
        }
        probs.extend(p);
    }
    Ok(WceOutput {
        loss: if batch == 0 { 0.0 } else { total / batch as f64 },
        probs,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WceOutput {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|i| self.counts[i][i]).sum()
    }

    /// One-vs-rest `(tp, fp, fn, tn)` for `class`.
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[class][class];
        let fp: u64 = (0..self.num_classes).map(|t| self.counts[t][class]).sum::<u64>() - tp;
        let fneg: u64 = self.counts[class].iter().sum::<u64>() - tp;
        let tn = self.total() - tp - fp - fneg;
        (tp, fp, fneg, tn)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn confusion(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), predicted.len()));
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= num_classes {
                return Err(MetricsError::LabelOutOfRange { label, num_classes });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UndefinedFlags {
    pub precision: bool,
    pub recall: bool,
    pub specificity: bool,
    pub f1: bool,
    pub auc: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    /// `None` when the class has no positives or no negatives.
    pub auc: Option<f64>,
    pub undefined: UndefinedFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_classes: usize,
    pub loss: Option<f64>,
    /// Fraction of samples whose argmax prediction is the true class.
    pub overall_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean over classes; `auc` averages the defined classes only.
    pub macro_avg: ClassMetrics,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Per-class and macro metrics from a confusion matrix (AUC left unset).
pub fn derive_metrics(cm: &ConfusionMatrix) -> EvalReport {
    let n = cm.total();
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes)
        .map(|c| {
            let (tp, fp, fneg, tn) = cm.one_vs_rest(c);
            let (precision, p_undef) = ratio(tp, tp + fp);
            let (recall, r_undef) = ratio(tp, tp + fneg);
            let (specificity, s_undef) = ratio(tn, tn + fp);
            let (accuracy, _) = ratio(tp + tn, n);
            let (f1, f_undef) = if precision + recall > 0.0 {
                (2.0 * precision * recall / (precision + recall), false)
            } else {
                (0.0, true)
            };
            ClassMetrics {
                accuracy,
                precision,
                recall,
                specificity,
                f1,
                auc: None,
                undefined: UndefinedFlags {
                    precision: p_undef,
                    recall: r_undef,
                    specificity: s_undef,
                    f1: f_undef,
                    auc: true,
                },
            }
        })
        .collect();
    let k = per_class.len().max(1) as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let macro_avg = ClassMetrics {
        accuracy: mean(|m| m.accuracy),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        specificity: mean(|m| m.specificity),
        f1: mean(|m| m.f1),
        auc: None,
        undefined: UndefinedFlags {
            precision: per_class.iter().any(|m| m.undefined.precision),
            recall: per_class.iter().any(|m| m.undefined.recall),
            specificity: per_class.iter().any(|m| m.undefined.specificity),
            f1: per_class.iter().any(|m| m.undefined.f1),
            auc: true,
        },
    };
    EvalReport {
        num_classes: cm.num_classes,
        loss: None,
        overall_accuracy: ratio(cm.trace(), n).0,
        per_class,
        macro_avg,
        confusion: cm.clone(),
    }
}

/// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half. Computed from average ranks in `O(n log n)`.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucResult {
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes with a defined AUC; `None` if there are none.
    pub macro_auc: Option<f64>,
}

/// One-vs-rest AUC per class from row-major `scores` (`labels.len()` rows).
pub fn roc_auc(labels: &[usize], scores: &[f64], num_classes: usize) -> Result<AucResult> {
    if scores.len() != labels.len() * num_classes {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len() * num_classes));
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(MetricsError::LabelOutOfRange { label, num_classes });
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let col: Vec<f64> = (0..labels.len()).map(|n| scores[n * num_classes + c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            binary_auc(&col, &pos)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_auc = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(AucResult { per_class, macro_auc })
}

/// AUC for one class, failing on a degenerate class instead of returning `None`.
pub fn class_auc(labels: &[usize], scores: &[f64], num_classes: usize, class: usize) -> Result<f64> {
    roc_auc(labels, scores, num_classes)?.per_class[class].ok_or(MetricsError::DegenerateClass(class))
}

/// Full report from predicted probabilities: argmax confusion, derived
/// metrics, one-vs-rest AUC and (optionally) the weighted loss.
pub fn evaluate(labels: &[usize], probs: &[f64], num_classes: usize, weights: Option<&[f64]>) -> Result<EvalReport> {
    if probs.len() != labels.len() * num_classes {
        return Err(MetricsError::LengthMismatch(probs.len(), labels.len() * num_classes));
    }
    let predicted: Vec<usize> = probs.chunks(num_classes).map(argmax).collect();
    let cm = confusion(labels, &predicted, num_classes)?;
    let mut report = derive_metrics(&cm);
    let auc = roc_auc(labels, probs, num_classes)?;
    for (m, a) in report.per_class.iter_mut().zip(&auc.per_class) {
        m.auc = *a;
        m.undefined.auc = a.is_none();
    }
    report.macro_avg.auc = auc.macro_auc;
    report.macro_avg.undefined.auc = auc.per_class.iter().any(Option::is_none);
    if let Some(w) = weights {
        report.loss = Some(weighted_cross_entropy(probs, labels, w)?);
    }
    Ok(report)
}
