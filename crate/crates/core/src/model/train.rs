use serde::{Deserialize, Serialize};

use super::data::Samples;
use super::network::Network;
use super::optim::{adam_step, AdamConfig, AdamState};
use super::{ModelError, Result};
use crate::dataset::kfold_labels;
use crate::imbalance::class_weights;
use crate::metrics::{evaluate, EvalReport};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Minimum decrease that counts as an improvement.
    pub min_delta: f64,
    pub folds: usize,
    pub seed: u64,
    /// Layer selectors passed to [`Network::freeze`].
    pub frozen_layers: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            adam: AdamConfig::default(),
            max_epochs: 30,
            patience: 5,
            min_delta: 0.0,
            folds: 4,
            seed: 0,
            frozen_layers: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam needs lr > 0 and betas in [0, 1)");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Tracks the best validation loss and signals a stop after `patience`
/// consecutive epochs without improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss.is_finite() && loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            return StopDecision::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::NoImprovement
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

impl MetricRow {
    pub fn from_report(epoch: usize, split: &str, r: &EvalReport) -> Self {
        let m = &r.macro_avg;
        Self {
            epoch,
            split: split.to_string(),
            loss: r.loss.unwrap_or(f64::NAN),
            accuracy: r.overall_accuracy,
            precision: m.precision,
            recall: m.recall,
            specificity: m.specificity,
            f1: m.f1,
            auc: m.auc,
        }
    }
}

/// Per-epoch train and validation metrics (macro averages, overall accuracy).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTrace {
    pub rows: Vec<MetricRow>,
}

impl MetricTrace {
    pub const CSV_HEADER: &'static str = "epoch,split,loss,accuracy,precision,recall,specificity,f1,auc";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let auc = r.auc.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.epoch, r.split, r.loss, r.accuracy, r.precision, r.recall, r.specificity, r.f1, auc
            ));
        }
        out
    }

    pub fn split_rows<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows.iter().filter(move |r| r.split == split)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Parameters from the epoch with the lowest validation loss.
    pub network: Network,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Row-major class probabilities for every sample.
pub fn predict(net: &Network, samples: &Samples) -> Result<Vec<f64>> {
    let mut probs = Vec::with_capacity(samples.len() * net.num_classes());
    for i in 0..samples.len() {
        probs.extend(net.predict_sample(samples.sample(i))?);
    }
    Ok(probs)
}

/// Predictions plus the full metric report, including the weighted loss.
pub fn evaluate_samples(net: &Network, samples: &Samples, weights: &[f64]) -> Result<EvalReport> {
    let probs = predict(net, samples)?;
    Ok(evaluate(&samples.labels, &probs, net.num_classes(), Some(weights))?)
}

/// Mini-batch Adam training with per-epoch evaluation and early stopping on
/// validation loss. Train metrics come from the forward passes made while
/// training through the epoch.
pub fn train(
    net: &Network,
    train_set: &Samples,
    val_set: &Samples,
    weights: &[f64],
    cfg: &TrainConfig,
) -> Result<(TrainedModel, MetricTrace)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptyManifest("training"));
    }
    if val_set.is_empty() {
        return Err(ModelError::EmptyManifest("validation"));
    }
    let mut net = net.clone();
    if !cfg.frozen_layers.is_empty() {
        let selectors: Vec<&str> = cfg.frozen_layers.iter().map(String::as_str).collect();
        net.freeze(&selectors)?;
    }
    let classes = net.num_classes();
    let mut state = AdamState::default();
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut trace = MetricTrace::default();
    let mut best = net.clone();
    let mut epochs_run = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        rng::shuffle(&mut order, &mut rng::derived(cfg.seed, epoch as u64));
        let mut probs = vec![0.0; train_set.len() * classes];
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| train_set.sample(i)).collect();
            let ts: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let (_, grads, p) = net.loss_and_grad(&xs, &ts, weights)?;
            for (k, &i) in batch.iter().enumerate() {
                probs[i * classes..(i + 1) * classes].copy_from_slice(&p[k * classes..(k + 1) * classes]);
            }
            adam_step(&mut net, &grads, &mut state, &cfg.adam);
        }
        let train_report = evaluate(&train_set.labels, &probs, classes, Some(weights))?;
        let val_report = evaluate_samples(&net, val_set, weights)?;
        trace.rows.push(MetricRow::from_report(epoch, "train", &train_report));
        trace.rows.push(MetricRow::from_report(epoch, "val", &val_report));
        let val_loss = val_report.loss.expect("weights supplied");
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {val_loss:.4} acc {:.4}",
            train_report.loss.unwrap_or(f64::NAN),
            train_report.overall_accuracy,
            val_report.overall_accuracy
        );
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = net.clone(),
            StopDecision::NoImprovement => {}
            StopDecision::Stop => {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    Ok((
        TrainedModel {
            network: best,
            best_epoch: stopper.best_epoch,
            best_val_loss: stopper.best,
            epochs_run,
            stopped_early,
        },
        trace,
    ))
}

/// Validation metrics of one fold, or their mean across folds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

impl FoldSummary {
    fn from_report(r: &EvalReport) -> Self {
        Self {
            loss: r.loss.unwrap_or(f64::NAN),
            accuracy: r.overall_accuracy,
            precision: r.macro_avg.precision,
            recall: r.macro_avg.recall,
            specificity: r.macro_avg.specificity,
            f1: r.macro_avg.f1,
            auc: r.macro_avg.auc,
        }
    }

    /// Arithmetic mean of each field; `auc` over the folds where it is defined.
    pub fn mean(rows: &[FoldSummary]) -> Self {
        let n = rows.len().max(1) as f64;
        let avg = |f: fn(&FoldSummary) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let aucs: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
        Self {
            loss: avg(|r| r.loss),
            accuracy: avg(|r| r.accuracy),
            precision: avg(|r| r.precision),
            recall: avg(|r| r.recall),
            specificity: avg(|r| r.specificity),
            f1: avg(|r| r.f1),
            auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub model: TrainedModel,
    pub trace: MetricTrace,
    pub val_indices: Vec<usize>,
    pub summary: FoldSummary,
}

#[derive(Debug, Clone)]
pub struct KFoldResult {
    pub folds: Vec<FoldResult>,
    pub mean: FoldSummary,
}

/// Stratified k-fold training, every fold starting from `net`. Class
/// weights come from `weights` or, if `None`, from each fold's training
/// class counts.
pub fn kfold_train(
    net: &Network,
    samples: &Samples,
    weights: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<KFoldResult> {
    if cfg.folds < 2 {
        return Err(ModelError::InvalidConfig(format!("folds {} must be >= 2", cfg.folds)));
    }
    let folds = kfold_labels(&samples.labels, cfg.folds, cfg.seed)?;
    let mut results = Vec::with_capacity(folds.len());
    for (k, fold) in folds.iter().enumerate() {
        let train_set = samples.select(&fold.train);
        let val_set = samples.select(&fold.val);
        let w = match weights {
            Some(w) => w.to_vec(),
            None => class_weights(&train_set.class_counts(net.num_classes()), None)?.weights,
        };
        log::info!(
            "fold {}/{}: {} train, {} val",
            k + 1,
            folds.len(),
            train_set.len(),
            val_set.len()
        );
        let (model, trace) = train(net, &train_set, &val_set, &w, cfg)?;
        let report = evaluate_samples(&model.network, &val_set, &w)?;
        results.push(FoldResult {
            model,
            trace,
            val_indices: fold.val.clone(),
            summary: FoldSummary::from_report(&report),
        });
    }
    let rows: Vec<FoldSummary> = results.iter().map(|r| r.summary.clone()).collect();
    Ok(KFoldResult {
        folds: results,
        mean: FoldSummary::mean(&rows),
    })
}
