//! One scenario run: imbalance strategy, training, test evaluation and a
//! run directory holding everything needed to reproduce it.

use std::path::{Path, PathBuf};

use cxr_core::imbalance::{class_weights, oversample};
use cxr_core::model::{save_checkpoint, train, train::evaluate_samples, MetricTrace, Network, Samples};
use cxr_core::{EvalReport, Manifest, Split};
use serde::{Deserialize, Serialize};

use crate::config::{Imbalance, RunConfig, Scenario};
use crate::hash::{hash_inputs, text_hash};
use crate::{write_file, write_json, CliError, Result};

/// File names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const PROVENANCE: &str = "provenance.json";
    pub const SUMMARY: &str = "run.json";
    pub const REPORT: &str = "report.json";
    pub const TRACE: &str = "trace.csv";
    pub const CHECKPOINT: &str = "model.ckpt";
    pub const CLASS_WEIGHTS: &str = "class_weights.json";
    pub const TRAIN_MANIFEST: &str = "train_manifest.csv";
    pub const OVERSAMPLED_DIR: &str = "oversampled";
}

/// Seed and input identity of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Tree hash of the manifest and every image it lists.
    pub input_hash: String,
    /// Hash of the resolved configuration JSON.
    pub config_hash: String,
    pub tool_version: String,
}

/// Training outcome recorded next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub scenario: String,
    /// Per-class training counts after the imbalance strategy.
    pub train_counts: Vec<usize>,
    /// Loss weights used in training and evaluation.
    pub class_weights: Vec<f64>,
    pub synthesized: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub scenario: Scenario,
    pub provenance: Provenance,
    pub summary: RunSummary,
    /// Test-split evaluation of the best-validation snapshot.
    pub report: EvalReport,
    pub trace: MetricTrace,
    pub network: Network,
}

/// Applies the configured imbalance strategy, trains on the train split
/// with early stopping on the validation split, evaluates the test split
/// and writes `config.json`, `provenance.json`, `run.json`, `report.json`,
/// `trace.csv` and `model.ckpt` into `<output_dir>/<scenario>-<name>-<hash>`.
/// Weighted-loss runs also write `class_weights.json`; oversampling runs
/// write the synthesized images and `train_manifest.csv`.
pub fn cmd_run_scenario(config: &RunConfig) -> Result<RunOutcome> {
    let cfg = config.clone().resolve()?;
    let scenario = cfg.scenario();
    let scheme = cfg.scheme;
    let manifest_path = cfg.paths.manifest.clone().expect("resolved");
    let image_root = cfg.paths.image_root.clone().expect("resolved");
    let output_dir = cfg.paths.output_dir.clone().expect("resolved");
    let manifest = Manifest::load(&manifest_path)?;

    let input_hash = hash_inputs(&manifest_path, &manifest, &image_root)?;
    let config_json = serde_json::to_string_pretty(&cfg).map_err(CliError::json(&manifest_path))?;
    let config_hash = text_hash(&config_json);
    let run_id = &text_hash(&format!("{config_hash}{input_hash}"))[..12];
    let run_dir = output_dir.join(format!("{scenario}-{}-{run_id}", cfg.name));
    std::fs::create_dir_all(&run_dir).map_err(CliError::io(&run_dir))?;
    // Synthesized records carry absolute paths so they resolve from any root.
    let run_dir = run_dir.canonicalize().map_err(CliError::io(&run_dir))?;
    log::info!("scenario {scenario} in {}", run_dir.display());

    write_file(&run_dir.join(files::CONFIG), config_json + "\n")?;
    let provenance = Provenance {
        seed: cfg.seed,
        input_hash,
        config_hash,
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    write_json(&run_dir.join(files::PROVENANCE), &provenance)?;

    let classes = scheme.num_classes();
    let mut train_manifest = manifest.subset(Split::Train);
    let (weights, synthesized) = match cfg.imbalance {
        Imbalance::WeightedLoss => {
            let table = class_weights(&train_manifest.class_counts(scheme), cfg.class_constants.as_deref())?;
            log::info!("class weights {:?} for counts {:?}", table.weights, table.counts);
            write_json(&run_dir.join(files::CLASS_WEIGHTS), &table)?;
            (table.weights, 0)
        }
        Imbalance::Oversample => {
            let out_dir = run_dir.join(files::OVERSAMPLED_DIR);
            let before = train_manifest.len();
            train_manifest = oversample(
                &train_manifest,
                scheme,
                &cfg.augment,
                &cfg.oversample_target,
                &image_root,
                &out_dir,
            )?;
            train_manifest.save(run_dir.join(files::TRAIN_MANIFEST))?;
            log::info!(
                "oversampled {before} training records to {} ({:?} per class)",
                train_manifest.len(),
                train_manifest.class_counts(scheme)
            );
            (vec![1.0; classes], train_manifest.len() - before)
        }
    };

    let spec = cfg.network.spec(classes)?;
    let load = |m: &Manifest| Samples::from_manifest(m, scheme, &image_root, spec.input);
    let train_set = load(&train_manifest)?;
    let val_set = load(&manifest.subset(Split::Val))?;
    let test_set = load(&manifest.subset(Split::Test))?;
    if test_set.is_empty() {
        return Err(cxr_core::model::ModelError::EmptyManifest("test").into());
    }

    let net = Network::new(spec, cfg.seed)?;
    let (model, trace) = train(&net, &train_set, &val_set, &weights, &cfg.train)?;
    let report = evaluate_samples(&model.network, &test_set, &weights)?;
    log::info!(
        "scenario {scenario}: best epoch {} of {}, test accuracy {:.4}",
        model.best_epoch,
        model.epochs_run,
        report.overall_accuracy
    );

    let summary = RunSummary {
        name: cfg.name.clone(),
        scenario: scenario.to_string(),
        train_counts: train_set.class_counts(classes),
        class_weights: weights,
        synthesized,
        best_epoch: model.best_epoch,
        best_val_loss: model.best_val_loss,
        epochs_run: model.epochs_run,
        stopped_early: model.stopped_early,
    };
    write_json(&run_dir.join(files::SUMMARY), &summary)?;
    write_json(&run_dir.join(files::REPORT), &report)?;
    write_file(&run_dir.join(files::TRACE), trace.to_csv())?;
    save_checkpoint(&model.network, run_dir.join(files::CHECKPOINT))?;

    Ok(RunOutcome {
        run_dir,
        scenario,
        provenance,
        summary,
        report,
        trace,
        network: model.network,
    })
}

/// Reads the report of a finished run.
pub fn load_report(run_dir: &Path) -> Result<EvalReport> {
    crate::read_json(&run_dir.join(files::REPORT))
}
