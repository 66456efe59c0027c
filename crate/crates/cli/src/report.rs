//! Side-by-side comparison of finished runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cxr_core::EvalReport;
use serde::Serialize;

use crate::config::RunConfig;
use crate::scenario::{files, load_report};
use crate::{CliError, Result};

/// Metric columns in table order.
pub const METRICS: [&str; 6] = ["accuracy", "precision", "recall", "auc", "specificity", "f1"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub run_dir: PathBuf,
    pub model: String,
    pub scenario: String,
    /// Values in [`METRICS`] order; AUC is `None` when undefined.
    pub values: [Option<f64>; 6],
    /// Whether each value is the column maximum (ties share the flag).
    pub best: [bool; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ReportRow>,
}

fn metric_values(r: &EvalReport) -> [Option<f64>; 6] {
    let m = &r.macro_avg;
    [
        Some(r.overall_accuracy),
        Some(m.precision),
        Some(m.recall),
        m.auc,
        Some(m.specificity),
        Some(m.f1),
    ]
}

fn load_row(dir: &Path) -> Result<ReportRow> {
    let missing = |reason: String| CliError::MissingRun {
        path: dir.to_path_buf(),
        reason,
    };
    for name in [files::CONFIG, files::REPORT] {
        if !dir.join(name).is_file() {
            return Err(missing(format!("{name} not found")));
        }
    }
    let config = RunConfig::load(&dir.join(files::CONFIG)).map_err(|e| missing(e.to_string()))?;
    let report = load_report(dir)?;
    Ok(ReportRow {
        run_dir: dir.to_path_buf(),
        model: config.name.clone(),
        scenario: config.scenario().to_string(),
        values: metric_values(&report),
        best: [false; 6],
    })
}

/// Loads every run directory and marks the best value of each metric.
/// Scenario labels come from each run's configuration snapshot.
pub fn cmd_report(run_dirs: &[PathBuf]) -> Result<ComparisonTable> {
    if run_dirs.is_empty() {
        return Err(CliError::MissingRun {
            path: PathBuf::new(),
            reason: "no run directories given".into(),
        });
    }
    let mut rows = run_dirs.iter().map(|d| load_row(d)).collect::<Result<Vec<_>>>()?;
    for col in 0..METRICS.len() {
        let best = rows
            .iter()
            .filter_map(|r| r.values[col])
            .fold(f64::NEG_INFINITY, f64::max);
        for r in &mut rows {
            r.best[col] = r.values[col] == Some(best);
        }
    }
    Ok(ComparisonTable { rows })
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,scenario");
        for m in METRICS {
            let _ = write!(out, ",{m}");
        }
        for m in METRICS {
            let _ = write!(out, ",best_{m}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.model, r.scenario);
            for v in r.values {
                let _ = write!(out, ",{}", v.map_or_else(String::new, |v| v.to_string()));
            }
            for b in r.best {
                let _ = write!(out, ",{b}");
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width text table; best values are marked with `*`.
    pub fn to_text(&self) -> String {
        let model_w = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<model_w$}  {:<8}", "model", "scenario");
        for m in METRICS {
            let _ = write!(out, " {m:>12}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<model_w$}  {:<8}", r.model, r.scenario);
            for (v, b) in r.values.iter().zip(r.best) {
                let cell = format!("{}{}", fmt_value(*v), if b { "*" } else { " " });
                let _ = write!(out, " {cell:>12}");
            }
            out.push('\n');
        }
        out
    }
}
