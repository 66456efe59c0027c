//! Independent reference computations used by the acceptance checks, and
//! the one-line verdict format they print.

use std::io::Write;
use std::time::Duration;

use cxr_core::metrics::wce_loss;
use cxr_core::model::Network;
use cxr_core::GrayImage;

/// Prints `criterion N: PASS|FAIL|SKIP  title (detail; seconds)` straight
/// to the process stdout so the line survives test output capture.
pub fn verdict(id: u8, status: &str, title: &str, detail: &str, elapsed: Duration) {
    let line = format!(
        "\ncriterion {id}: {status:<4}  {title} ({detail}; {:.2} s)\n",
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

pub fn pass_fail(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// AUC as the fraction of all (positive, negative) pairs ordered correctly,
/// ties counting one half.
pub fn brute_force_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut good = 0.0;
    let mut pairs = 0u64;
    for (i, &pi) in positive.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positive.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                good += 1.0;
            } else if scores[i] == scores[j] {
                good += 0.5;
            }
        }
    }
    (pairs > 0).then(|| good / pairs as f64)
}

/// Per-class metrics recomputed by counting outcomes directly from the
/// label and prediction lists.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveClass {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveReport {
    pub overall_accuracy: f64,
    pub per_class: Vec<NaiveClass>,
    pub macro_avg: NaiveClass,
}

fn div_or_zero(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn naive_metrics(truth: &[usize], predicted: &[usize], num_classes: usize) -> NaiveReport {
    let n = truth.len();
    let count = |f: &dyn Fn(usize, usize) -> bool| truth.iter().zip(predicted).filter(|(&t, &p)| f(t, p)).count();
    let per_class: Vec<NaiveClass> = (0..num_classes)
        .map(|c| {
            let tp = count(&|t, p| t == c && p == c);
            let fp = count(&|t, p| t != c && p == c);
            let fneg = count(&|t, p| t == c && p != c);
            let tn = count(&|t, p| t != c && p != c);
            let precision = div_or_zero(tp, tp + fp);
            let recall = div_or_zero(tp, tp + fneg);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            NaiveClass {
                accuracy: div_or_zero(tp + tn, n),
                precision,
                recall,
                specificity: div_or_zero(tn, tn + fp),
                f1,
            }
        })
        .collect();
    let k = num_classes as f64;
    let mean = |f: fn(&NaiveClass) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let macro_avg = NaiveClass {
        accuracy: mean(|m| m.accuracy),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        specificity: mean(|m| m.specificity),
        f1: mean(|m| m.f1),
    };
    NaiveReport {
        overall_accuracy: div_or_zero(count(&|t, p| t == p), n),
        per_class,
        macro_avg,
    }
}

/// Largest relative error between the analytic gradient of the batch WCE
/// loss and its central finite difference with step `h`. Relative errors
/// use `max(|fd|, |analytic|, 1e-6)` as denominator.
pub fn max_gradient_error(net: &Network, xs: &[Vec<f64>], targets: &[usize], weights: &[f64], h: f64) -> f64 {
    let loss = |n: &Network| {
        let mut logits = Vec::new();
        for x in xs {
            logits.extend(n.logits(x).expect("valid input"));
        }
        wce_loss(&logits, targets, weights).expect("valid batch").loss
    };
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let (_, grads, _) = net.loss_and_grad(&refs, targets, weights).expect("valid batch");
    let mut worst = 0.0f64;
    for (pi, g) in grads.0.iter().enumerate() {
        let Some(g) = g else { continue };
        for (j, &analytic) in g.iter().enumerate() {
            let mut up = net.clone();
            up.params[pi].data[j] += h;
            let mut down = net.clone();
            down.params[pi].data[j] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            let denom = fd.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max((fd - analytic).abs() / denom);
        }
    }
    worst
}

/// Solves the 4-neighbour discrete Laplace equation on the `cells` of
/// `img` by Gaussian elimination with partial pivoting. Row `i` reads
/// `deg_i·u_i − Σ unknown neighbours = Σ known neighbours`.
pub fn laplace_solve(img: &GrayImage, cells: &[(usize, usize)]) -> Vec<f64> {
    let n = cells.len();
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut a = vec![vec![0.0; n + 1]; n];
    for (i, &(x, y)) in cells.iter().enumerate() {
        for (dx, dy) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            a[i][i] += 1.0;
            let nb = (nx as usize, ny as usize);
            match cells.iter().position(|&c| c == nb) {
                Some(j) => a[i][j] -= 1.0,
                None => a[i][n] += img.get(nb.0, nb.1),
            }
        }
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .expect("non-empty");
        a.swap(col, pivot);
        let pivot_row = a[col].clone();
        for (row, r) in a.iter_mut().enumerate() {
            if row != col {
                let f = r[col] / pivot_row[col];
                for (v, p) in r.iter_mut().zip(&pivot_row).skip(col) {
                    *v -= f * p;
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}
