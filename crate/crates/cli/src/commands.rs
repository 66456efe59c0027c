//! Argument definitions and dispatch for the `cxr` executable.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cxr_core::dataset::{self, parse_counts, preset, Split};
use cxr_core::denoise::{psnr, tv_denoise, TVParams};
use cxr_core::explain::{
    class_probabilities, grad_cam, lime_explain, render_overlay, write_sidecar, Heatmap, LimeConfig, LimeExplanation,
    OcclusionFill, Overlay,
};
use cxr_core::imaging::resize_bilinear;
use cxr_core::imbalance::{oversample, AugmentSpec, OversampleTarget};
use cxr_core::metrics::argmax;
use cxr_core::model::{load_checkpoint, train::evaluate_samples, Samples, Tap};
use cxr_core::synthetic::{fused_corpus_manifests, write_disc_dataset, write_placeholder_images, DiscCounts};
use cxr_core::{GrayImage, LabelScheme, Manifest, ThresholdParams};
use serde::Serialize;

use crate::config::{Imbalance, RunConfig, Scenario};
use crate::{
    cmd_preprocess, cmd_report, cmd_run_scenario, exit, write_file, write_json, CliError, Result, OUTPUT_ROOT_ENV,
};

#[derive(Debug, Parser)]
#[command(name = "cxr", version, about = "Radiograph classification pipeline")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Concatenate manifests with disjoint paths.
    Fuse(FuseArgs),
    /// Assign train/val/test splits per class.
    Split(SplitArgs),
    /// Mask, inpaint, resize and denoise every image of a manifest.
    Preprocess(PreprocessArgs),
    /// Add augmented training images until class targets are met.
    Oversample(OversampleArgs),
    /// Run one scenario: imbalance strategy, training and test evaluation.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Evaluate(EvaluateArgs),
    /// Grad-CAM or LIME explanation of one image.
    Explain(ExplainArgs),
    /// Compare finished runs.
    Report(ReportArgs),
    /// Adaptive TV denoising of one image.
    Denoise(DenoiseArgs),
    /// Generate synthetic stand-in data.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Manifests to fuse, in order.
    #[arg(required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Label scheme; implied by --preset.
    #[arg(long)]
    pub scheme: Option<LabelScheme>,
    /// Published split preset, e.g. table2-cb.
    #[arg(long, conflicts_with = "counts")]
    pub preset: Option<String>,
    /// Per-class train/val/test counts, e.g. 906/90/110,88/9/11.
    #[arg(long)]
    pub counts: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Run configuration whose `preprocess` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write mask, inpainted, resized and denoised images.
    #[arg(long)]
    pub keep_stages: bool,
    /// Side of the resized square image.
    #[arg(long)]
    pub size: Option<usize>,
    /// Pixels at or above this intensity are inpainted.
    #[arg(long)]
    pub min_th: Option<f64>,
    /// Value a rendered mask carries.
    #[arg(long)]
    pub max_th: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OversampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long, default_value = "binary")]
    pub scheme: LabelScheme,
    /// JSON file holding the augmentation ranges.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// `max`, one count for every class, or comma-separated per-class counts.
    #[arg(long, default_value = "max")]
    pub target: OversampleTarget,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Receives the synthesized images and `manifest.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Flags that override fields of a run configuration.
#[derive(Debug, Default, Args)]
pub struct RunOverrides {
    /// Scenario code (CB, CM3, CM4, RB, RM3, RM4); sets scheme and strategy.
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub scheme: Option<LabelScheme>,
    #[arg(long, value_enum)]
    pub imbalance: Option<ImbalanceArg>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Parent of run directories.
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Layer selectors to freeze (repeatable).
    #[arg(long)]
    pub freeze: Vec<String>,
    #[arg(long)]
    pub oversample_target: Option<OversampleTarget>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ImbalanceArg {
    WeightedLoss,
    Oversample,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.scenario {
            cfg.set_scenario(s);
        }
        if let Some(s) = self.scheme {
            cfg.scheme = s;
        }
        if let Some(i) = self.imbalance {
            cfg.imbalance = match i {
                ImbalanceArg::WeightedLoss => Imbalance::WeightedLoss,
                ImbalanceArg::Oversample => Imbalance::Oversample,
            };
        }
        if let Some(n) = &self.name {
            cfg.name = n.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = &self.manifest {
            cfg.paths.manifest = Some(p.clone());
        }
        if let Some(p) = &self.image_root {
            cfg.paths.image_root = Some(p.clone());
        }
        if let Some(p) = &self.output_dir {
            cfg.paths.output_dir = Some(p.clone());
        }
        if let Some(n) = self.input_size {
            cfg.network.input_size = n;
        }
        if let Some(n) = self.epochs {
            cfg.train.max_epochs = n;
        }
        if let Some(n) = self.batch_size {
            cfg.train.batch_size = n;
        }
        if let Some(lr) = self.lr {
            cfg.train.adam.lr = lr;
        }
        if let Some(n) = self.patience {
            cfg.train.patience = n;
        }
        if !self.freeze.is_empty() {
            cfg.train.frozen_layers = self.freeze.clone();
        }
        if let Some(t) = &self.oversample_target {
            cfg.oversample_target = t.clone();
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: RunOverrides,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Label scheme; inferred from the checkpoint's class count when absent.
    #[arg(long)]
    pub scheme: Option<LabelScheme>,
    /// Loss weights per class, comma separated; uniform when absent.
    #[arg(long, value_delimiter = ',')]
    pub class_weights: Option<Vec<f64>>,
    /// Write the report JSON here as well as printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Gradcam,
    Lime,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FillArg {
    Zero,
    Mean,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Target class; the predicted class when absent.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long, value_enum, default_value = "gradcam")]
    pub method: Method,
    /// Grad-CAM block (0-based); the last block when absent.
    #[arg(long)]
    pub block: Option<usize>,
    /// LIME superpixel grid, rows x cols.
    #[arg(long, default_value = "8x8", value_parser = parse_grid)]
    pub grid: (usize, usize),
    /// LIME perturbation count.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "zero")]
    pub fill: FillArg,
    /// Overlay PNG; the JSON sidecar goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub run_dirs: Vec<PathBuf>,
    /// Write the comparison CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Write the energy trace CSV here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Clean reference image; prints PSNR before and after.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Bright-disc (COVID19 finding) and dark-disc (Normal) images with splits.
    Discs(DiscArgs),
    /// Placeholder manifests and images with the fused corpus composition.
    Corpus(CorpusArgs),
}

#[derive(Debug, Args)]
pub struct DiscArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Bright/dark counts of the training split.
    #[arg(long, default_value = "50/150", value_parser = parse_disc_counts)]
    pub train: DiscCounts,
    #[arg(long, default_value = "10/30", value_parser = parse_disc_counts)]
    pub val: DiscCounts,
    #[arg(long, default_value = "10/30", value_parser = parse_disc_counts)]
    pub test: DiscCounts,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Side of the placeholder images; 0 writes manifests only.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X', '×'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((n(r)?, n(c)?))
}

fn parse_disc_counts(s: &str) -> std::result::Result<DiscCounts, String> {
    let (b, d) = s
        .split_once('/')
        .ok_or_else(|| format!("expected BRIGHT/DARK, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok(DiscCounts {
        bright: n(b)?,
        dark: n(d)?,
    })
}

fn root_or_parent(root: &Option<PathBuf>, manifest: &Path) -> PathBuf {
    root.clone()
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn scheme_for_classes(n: usize) -> Result<LabelScheme> {
    match n {
        2 => Ok(LabelScheme::Binary),
        3 => Ok(LabelScheme::Multi3),
        4 => Ok(LabelScheme::Multi4),
        _ => Err(CliError::Config(format!("no label scheme has {n} classes"))),
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Fuse(a) => fuse(a),
        Command::Split(a) => split(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Oversample(a) => oversample_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Explain(a) => explain(a),
        Command::Report(a) => report(a),
        Command::Denoise(a) => denoise(a),
        Command::Synth(c) => synth(c),
    }
}

fn print_counts(manifest: &Manifest) {
    let counts = manifest.finding_counts();
    for (finding, n) in dataset::Finding::ALL.iter().zip(counts) {
        println!("{finding:?}: {n}");
    }
    println!("total: {}", manifest.len());
}

fn fuse(a: FuseArgs) -> Result<u8> {
    let parts = a
        .manifests
        .iter()
        .map(Manifest::load)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let fused = dataset::fuse(&parts)?;
    fused.save(&a.out)?;
    print_counts(&fused);
    Ok(exit::SUCCESS)
}

fn split(a: SplitArgs) -> Result<u8> {
    let (scheme, counts) = match (&a.preset, &a.counts) {
        (Some(name), None) => {
            let p = preset(name)?;
            if a.scheme.is_some_and(|s| s != p.scheme) {
                return Err(CliError::Config(format!("preset {name} uses the {} scheme", p.scheme)));
            }
            (p.scheme, p.counts)
        }
        (None, Some(c)) => {
            let scheme = a
                .scheme
                .ok_or_else(|| CliError::Config("--counts needs --scheme".into()))?;
            (scheme, parse_counts(c)?)
        }
        _ => return Err(CliError::Config("give exactly one of --preset or --counts".into())),
    };
    let manifest = Manifest::load(&a.manifest)?;
    let out = dataset::split(&manifest, scheme, &counts, a.seed)?;
    out.save(&a.out)?;
    for s in [Split::Train, Split::Val, Split::Test] {
        println!("{s:?}: {:?}", out.subset(s).class_counts(scheme));
    }
    Ok(exit::SUCCESS)
}

fn preprocess(a: PreprocessArgs) -> Result<u8> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = &a.manifest {
        cfg.paths.manifest = Some(m.clone());
    }
    if let Some(r) = &a.image_root {
        cfg.paths.image_root = Some(r.clone());
    }
    let pre = &mut cfg.preprocess;
    if let Some(s) = a.size {
        pre.size = s;
    }
    match (a.min_th, a.max_th, pre.threshold.as_mut()) {
        (Some(min_th), Some(max_th), _) => pre.threshold = Some(ThresholdParams { min_th, max_th }),
        (min_th, max_th, Some(t)) => {
            t.min_th = min_th.unwrap_or(t.min_th);
            t.max_th = max_th.unwrap_or(t.max_th);
        }
        _ => {
            return Err(CliError::Config(
                "--min-th and --max-th are required unless the config sets preprocess.threshold".into(),
            ))
        }
    }
    pre.validate()?;
    let manifest_path = cfg
        .paths
        .manifest
        .clone()
        .ok_or_else(|| CliError::Config("no manifest path given".into()))?;
    let root = root_or_parent(&cfg.paths.image_root, &manifest_path);
    let manifest = Manifest::load(&manifest_path)?;
    let outcome = cmd_preprocess(&cfg.preprocess, &manifest, &root, &a.out_dir, a.keep_stages)?;
    write_json(&a.out_dir.join("preprocess_config.json"), &cfg.preprocess)?;
    println!(
        "processed {} of {} images into {}",
        outcome.manifest.len(),
        manifest.len(),
        outcome.image_root().display()
    );
    if outcome.failures.is_empty() {
        Ok(exit::SUCCESS)
    } else {
        eprintln!(
            "{} images failed; see {}",
            outcome.failures.len(),
            a.out_dir.join("failures.log").display()
        );
        Ok(exit::PARTIAL_FAILURE)
    }
}

fn oversample_cmd(a: OversampleArgs) -> Result<u8> {
    let mut spec = match &a.spec {
        Some(p) => AugmentSpec::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => AugmentSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let manifest = Manifest::load(&a.manifest)?;
    let root = root_or_parent(&a.image_root, &a.manifest);
    let out = oversample(&manifest, a.scheme, &spec, &a.target, &root, &a.out_dir)?;
    out.save(a.out_dir.join("manifest.csv"))?;
    let train = out.subset(Split::Train);
    println!(
        "train counts: {:?} (total {})",
        train.class_counts(a.scheme),
        train.len()
    );
    Ok(exit::SUCCESS)
}

fn train_cmd(a: TrainArgs) -> Result<u8> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    a.overrides.apply(&mut cfg);
    let outcome = cmd_run_scenario(&cfg)?;
    let r = &outcome.report;
    println!("scenario {} -> {}", outcome.scenario, outcome.run_dir.display());
    println!(
        "best epoch {} of {}; test accuracy {:.4}, macro f1 {:.4}, macro auc {}",
        outcome.summary.best_epoch,
        outcome.summary.epochs_run,
        r.overall_accuracy,
        r.macro_avg.f1,
        r.macro_avg
            .auc
            .map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
    );
    Ok(exit::SUCCESS)
}

fn evaluate(a: EvaluateArgs) -> Result<u8> {
    let net = load_checkpoint(&a.model)?;
    let classes = net.num_classes();
    let scheme = match a.scheme {
        Some(s) if s.num_classes() != classes => {
            return Err(CliError::Config(format!(
                "scheme {s} has {} classes, model has {classes}",
                s.num_classes()
            )))
        }
        Some(s) => s,
        None => scheme_for_classes(classes)?,
    };
    let weights = a.class_weights.clone().unwrap_or_else(|| vec![1.0; classes]);
    if weights.len() != classes {
        return Err(CliError::Config(format!(
            "{} class weights for {classes} classes",
            weights.len()
        )));
    }
    let manifest = Manifest::load(&a.manifest)?;
    let selected = match a.split {
        SplitArg::Train => manifest.subset(Split::Train),
        SplitArg::Val => manifest.subset(Split::Val),
        SplitArg::Test => manifest.subset(Split::Test),
        SplitArg::All => manifest.clone(),
    };
    let root = root_or_parent(&a.image_root, &a.manifest);
    let samples = Samples::from_manifest(&selected, scheme, &root, net.spec().input)?;
    if samples.is_empty() {
        return Err(cxr_core::model::ModelError::EmptyManifest("evaluation").into());
    }
    let report = evaluate_samples(&net, &samples, &weights)?;
    let json = serde_json::to_string_pretty(&report).map_err(CliError::json(&a.model))?;
    if let Some(out) = &a.out {
        write_file(out, json.clone() + "\n")?;
    }
    println!("{json}");
    Ok(exit::SUCCESS)
}

#[derive(Serialize)]
struct ExplainSidecar<'a> {
    method: &'static str,
    target_class: usize,
    probabilities: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    heatmap: Option<&'a Heatmap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lime: Option<&'a LimeExplanation>,
}

fn explain(a: ExplainArgs) -> Result<u8> {
    let net = load_checkpoint(&a.model)?;
    let [_, h, w] = net.spec().input;
    let mut img = GrayImage::load(&a.image)?;
    if !img.same_dims(w, h) {
        img = resize_bilinear(&img, w, h)?;
    }
    let probabilities = class_probabilities(&net, &img)?;
    let class = a.class.unwrap_or_else(|| argmax(&probabilities));
    let sidecar_path = a.out.with_extension("json");
    match a.method {
        Method::Gradcam => {
            let map = grad_cam(&net, &img, class, a.block, Tap::default())?;
            render_overlay(&img, &Overlay::Heatmap(&map), &a.out)?;
            let sidecar = ExplainSidecar {
                method: "gradcam",
                target_class: class,
                probabilities,
                heatmap: Some(&map),
                lime: None,
            };
            write_sidecar(&sidecar, &sidecar_path)?;
        }
        Method::Lime => {
            let cfg = LimeConfig {
                rows: a.grid.0,
                cols: a.grid.1,
                num_perturbations: a.samples,
                seed: a.seed,
                fill: match a.fill {
                    FillArg::Zero => OcclusionFill::Zero,
                    FillArg::Mean => OcclusionFill::Mean,
                },
            };
            let lime = lime_explain(&net, &img, class, &cfg)?;
            render_overlay(&img, &Overlay::Lime(&lime), &a.out)?;
            let sidecar = ExplainSidecar {
                method: "lime",
                target_class: class,
                probabilities,
                heatmap: None,
                lime: Some(&lime),
            };
            write_sidecar(&sidecar, &sidecar_path)?;
        }
    }
    println!(
        "class {class}: overlay {}, weights {}",
        a.out.display(),
        sidecar_path.display()
    );
    Ok(exit::SUCCESS)
}

fn report(a: ReportArgs) -> Result<u8> {
    let table = cmd_report(&a.run_dirs)?;
    if let Some(out) = &a.out {
        write_file(out, table.to_csv())?;
    }
    print!("{}", table.to_text());
    Ok(exit::SUCCESS)
}

fn denoise(a: DenoiseArgs) -> Result<u8> {
    let mut p = TVParams::default();
    if let Some(v) = a.k {
        p.k = v;
    }
    if let Some(v) = a.sigma {
        p.sigma = v;
    }
    if let Some(v) = a.step {
        p.step = v;
    }
    if let Some(v) = a.tol {
        p.tol = v;
    }
    if let Some(v) = a.max_iters {
        p.max_iters = v;
    }
    p.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let input = GrayImage::load(&a.input)?;
    let (out, trace) = tv_denoise(&input, &p)?;
    out.save(&a.output)?;
    if let Some(t) = &a.trace {
        write_file(t, trace.to_csv())?;
    }
    println!("{} iterations", trace.energies.len().saturating_sub(1));
    if let Some(r) = &a.reference {
        let clean = GrayImage::load(r)?;
        println!("psnr {:.3} dB -> {:.3} dB", psnr(&clean, &input), psnr(&clean, &out));
    }
    Ok(exit::SUCCESS)
}

fn synth(c: SynthCommand) -> Result<u8> {
    match c {
        SynthCommand::Discs(a) => {
            let splits = [(Split::Train, a.train), (Split::Val, a.val), (Split::Test, a.test)];
            let (manifest, discs) = write_disc_dataset(&a.out_dir, a.size, &splits, a.seed)?;
            manifest.save(a.out_dir.join("manifest.csv"))?;
            let regions: Vec<_> = manifest
                .records
                .iter()
                .zip(&discs)
                .map(|(r, d)| (r.path.clone(), [d.cx, d.cy, d.radius]))
                .collect();
            write_json(&a.out_dir.join("discs.json"), &regions)?;
            println!("{} images in {}", manifest.len(), a.out_dir.display());
        }
        SynthCommand::Corpus(a) => {
            let parts = fused_corpus_manifests();
            for m in &parts {
                let source = format!("{:?}", m.records[0].source).to_ascii_lowercase();
                m.save(a.out_dir.join(format!("{source}.csv")))?;
                if a.size > 0 {
                    write_placeholder_images(m, &a.out_dir, a.size, a.seed)?;
                }
            }
            println!("{} manifests in {}", parts.len(), a.out_dir.display());
        }
    }
    Ok(exit::SUCCESS)
}
