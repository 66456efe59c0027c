//! Batch preprocessing: artifact mask, inpainting, resizing and adaptive
//! TV denoising for every image of a manifest.

use std::fmt::Write as _;
use std::path::{Component, Path, PathBuf};

use cxr_core::denoise::tv_denoise;
use cxr_core::imaging::{histogram, inpaint, resize_bilinear, threshold_mask, Histogram};
use cxr_core::{GrayImage, Manifest, SampleRecord};
use rayon::prelude::*;

use crate::config::PreprocessConfig;
use crate::{write_file, CliError, Result};

/// Stage names in pipeline order, as used in file names and histogram columns.
pub const STAGES: [&str; 4] = ["mask", "inpainted", "resized", "denoised"];

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOutcome {
    pub out_dir: PathBuf,
    /// Manifest of the successfully processed images, paths relative to
    /// `out_dir/images`.
    pub manifest: Manifest,
    /// `(manifest path, error)` of every image that failed.
    pub failures: Vec<(String, String)>,
}

impl PreprocessOutcome {
    pub fn image_root(&self) -> PathBuf {
        self.out_dir.join("images")
    }
}

/// Relative output stem for a record: its own relative path without the
/// extension, or `external/<index>_<name>` when the path is absolute or
/// climbs out of the root.
fn output_stem(record: &SampleRecord, index: usize) -> PathBuf {
    let p = Path::new(&record.path);
    let contained = p
        .components()
        .all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if contained {
        p.with_extension("")
    } else {
        let name = p
            .file_stem()
            .map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
        PathBuf::from("external").join(format!("{index:05}_{name}"))
    }
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn histogram_csv(hists: &[Histogram]) -> String {
    let mut out = String::from("lower,upper,raw,inpainted,resized,denoised\n");
    let edges = &hists[0].bin_edges;
    for b in 0..hists[0].bin_count {
        let _ = write!(out, "{},{}", edges[b], edges[b + 1]);
        for h in hists {
            let _ = write!(out, ",{}", h.counts[b]);
        }
        out.push('\n');
    }
    out
}

/// Processes one image, returning the denoised result and a log line.
fn process_one(
    cfg: &PreprocessConfig,
    src: &Path,
    stem: &Path,
    out_dir: &Path,
    keep_stages: bool,
) -> Result<(GrayImage, String)> {
    let threshold = cfg.threshold()?;
    let raw = GrayImage::load(src)?;
    let mask = threshold_mask(&raw, &threshold);
    let inpainted = inpaint(&raw, &mask, cfg.inpaint_max_iters, cfg.inpaint_tol)?;
    let resized = resize_bilinear(&inpainted, cfg.size, cfg.size)?;
    let (denoised, trace) = tv_denoise(&resized, &cfg.tv)?;
    if keep_stages {
        let images = [
            mask.render(threshold.max_th),
            inpainted.clone(),
            resized.clone(),
            denoised.clone(),
        ];
        for (stage, img) in STAGES.iter().zip(&images) {
            img.save(out_dir.join("stages").join(with_suffix(stem, &format!(".{stage}.png"))))?;
        }
    }
    let hists = [&raw, &inpainted, &resized, &denoised]
        .into_iter()
        .map(|img| histogram(img, cfg.histogram_bins))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    write_file(
        &out_dir.join("histograms").join(with_suffix(stem, ".csv")),
        histogram_csv(&hists),
    )?;
    let line = format!(
        "masked {} px, {} denoising iterations, final energy {}",
        mask.count(),
        trace.energies.len().saturating_sub(1),
        trace.energies.last().copied().unwrap_or(f64::NAN)
    );
    Ok((denoised, line))
}

/// Runs mask → inpaint → resize → denoise on every record. Per-image
/// failures are logged and skipped; the caller decides the exit status.
/// Writes `images/`, `histograms/`, optionally `stages/`, plus
/// `manifest.csv`, `preprocess.log` and `failures.log` under `out_dir`.
pub fn cmd_preprocess(
    cfg: &PreprocessConfig,
    manifest: &Manifest,
    image_root: &Path,
    out_dir: &Path,
    keep_stages: bool,
) -> Result<PreprocessOutcome> {
    cfg.validate()?;
    cfg.threshold()?;
    std::fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    // Images are independent; results are gathered in record order so the
    // written manifest and logs do not depend on scheduling.
    let results: Vec<Result<(PathBuf, String)>> = manifest
        .records
        .par_iter()
        .enumerate()
        .map(|(i, record)| {
            let stem = output_stem(record, i);
            let (img, line) = process_one(cfg, &record.resolve(image_root), &stem, out_dir, keep_stages)?;
            let rel = with_suffix(&stem, ".png");
            img.save(out_dir.join("images").join(&rel))?;
            Ok((rel, line))
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut log_text = String::new();
    for (record, result) in manifest.records.iter().zip(results) {
        match result {
            Ok((rel, line)) => {
                let _ = writeln!(log_text, "ok\t{}\t{line}", record.path);
                let mut out = record.clone();
                out.path = rel.to_string_lossy().replace('\\', "/");
                records.push(out);
            }
            Err(e) => {
                log::warn!("{}: {e}", record.path);
                let _ = writeln!(log_text, "failed\t{}\t{e}", record.path);
                failures.push((record.path.clone(), e.to_string()));
            }
        }
    }
    let mut out_manifest = Manifest::new(records)?;
    out_manifest.seed = manifest.seed;
    out_manifest.save(out_dir.join("manifest.csv"))?;
    write_file(&out_dir.join("preprocess.log"), log_text)?;
    let failure_text: String = failures.iter().map(|(p, e)| format!("{p}\t{e}\n")).collect();
    write_file(&out_dir.join("failures.log"), failure_text)?;
    Ok(PreprocessOutcome {
        out_dir: out_dir.to_path_buf(),
        manifest: out_manifest,
        failures,
    })
}
