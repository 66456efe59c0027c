//! Synthetic stand-in data: step images for denoising checks, bright/dark
//! disc images for end-to-end training, and manifests shaped like the fused
//! radiograph corpus.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Finding, Manifest, SampleRecord, Source, Split};
use crate::imaging::{GrayImage, ImagingError};
use crate::rng;

/// Left half `low`, right half `high`.
pub fn step_image(width: usize, height: usize, low: f64, high: f64) -> GrayImage {
    GrayImage::from_fn(width, height, |x, _| if x < width / 2 { low } else { high }).expect("positive dimensions")
}

/// Adds i.i.d. Gaussian noise and clamps back into `[0, 255]`.
pub fn add_gaussian_noise(img: &GrayImage, sigma: f64, seed: u64) -> GrayImage {
    let mut rng = rng::seeded(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let data = img.data().iter().map(|&v| v + normal.sample(&mut rng)).collect();
    GrayImage::from_clamped(img.width(), img.height(), data).expect("dims unchanged")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Disc {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// A disc of intensity `disc_value` on a `background` field plus mild noise.
/// Bright discs stand for the positive class, dark discs for the negative.
pub fn disc_image<R: Rng>(size: usize, bright: bool, rng: &mut R) -> (GrayImage, Disc) {
    let s = size as f64;
    let radius = rng::uniform(rng, 0.16 * s, 0.24 * s);
    let margin = radius + 1.0;
    let disc = Disc {
        cx: rng::uniform(rng, margin, s - margin),
        cy: rng::uniform(rng, margin, s - margin),
        radius,
    };
    let background = 128.0;
    let disc_value = if bright { 220.0 } else { 36.0 };
    let normal = Normal::new(0.0, 6.0).expect("finite sigma");
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let base = if disc.contains(x, y) { disc_value } else { background };
            data.push(base + normal.sample(rng));
        }
    }
    (GrayImage::from_clamped(size, size, data).expect("positive size"), disc)
}

/// Per-split counts of bright (positive) and dark (negative) disc images.
#[derive(Debug, Clone, Copy)]
pub struct DiscCounts {
    pub bright: usize,
    pub dark: usize,
}

/// Writes a disc dataset under `root` and returns its manifest. Bright discs
/// are recorded as COVID-19 findings and dark discs as normal, so the binary
/// scheme maps them to classes 1 and 0.
pub fn write_disc_dataset(
    root: &Path,
    size: usize,
    splits: &[(Split, DiscCounts)],
    seed: u64,
) -> Result<(Manifest, Vec<Disc>), ImagingError> {
    let mut records = Vec::new();
    let mut discs = Vec::new();
    let mut rng = rng::seeded(seed);
    for &(split, counts) in splits {
        let tag = format!("{split:?}").to_ascii_lowercase();
        let plan = std::iter::repeat_n(true, counts.bright).chain(std::iter::repeat_n(false, counts.dark));
        for (i, bright) in plan.enumerate() {
            let (img, disc) = disc_image(size, bright, &mut rng);
            let name = format!("{tag}/{}_{i:04}.png", if bright { "bright" } else { "dark" });
            img.save(root.join(&name))?;
            let finding = if bright { Finding::COVID19 } else { Finding::Normal };
            let mut record = SampleRecord::new(name, Source::SYNTHETIC, finding);
            record.split = split;
            records.push(record);
            discs.push(disc);
        }
    }
    let manifest = Manifest::new(records).expect("generated paths are unique");
    Ok((manifest, discs))
}

/// Manifests with the per-source class composition of the fused corpus
/// (COVID-19 image collection, RSNA, NLM Montgomery County). Paths are
/// placeholders `<source>/<finding>_<n>.png`.
pub fn fused_corpus_manifests() -> Vec<Manifest> {
    let parts: [(Source, &[(Finding, usize)]); 3] = [
        (
            Source::COVID19,
            &[(Finding::COVID19, 108), (Finding::OtherPneumonia, 45)],
        ),
        (Source::RSNA, &[(Finding::Normal, 453), (Finding::OtherPneumonia, 470)]),
        (Source::NLMMC, &[(Finding::Tuberculosis, 58), (Finding::Normal, 80)]),
    ];
    parts
        .iter()
        .map(|(source, findings)| {
            let mut records = Vec::new();
            for &(finding, n) in findings.iter() {
                for i in 0..n {
                    records.push(SampleRecord::new(
                        format!("{source:?}/{finding:?}_{i:04}.png").to_ascii_lowercase(),
                        *source,
                        finding,
                    ));
                }
            }
            Manifest::new(records).expect("unique placeholder paths")
        })
        .collect()
}

/// Writes small textured stand-in images for every record of `manifest`.
pub fn write_placeholder_images(manifest: &Manifest, root: &Path, size: usize, seed: u64) -> Result<(), ImagingError> {
    for (i, record) in manifest.records.iter().enumerate() {
        let mut rng = rng::derived(seed, i as u64);
        let base = 60.0 + 20.0 * record.finding as usize as f64;
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let img = GrayImage::from_fn(size, size, |x, y| {
            base + 40.0 * ((x as f64 * 0.4 + phase).sin() * (y as f64 * 0.3).cos())
        })?;
        img.save(record.resolve(root))?;
    }
    Ok(())
}
