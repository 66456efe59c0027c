//! Inverse-frequency class weights and random oversampling by geometric
//! augmentation.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, LabelScheme, Manifest, SampleRecord, Split};
use crate::imaging::{GrayImage, ImagingError};
use crate::rng;

#[derive(Debug, Error)]
pub enum ImbalanceError {
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("expected {expected} per-class values, got {got}")]
    ClassCount { expected: usize, got: usize },
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("target {target} for class {class} is below its current count {current}")]
    TargetBelowCurrent {
        class: usize,
        target: usize,
        current: usize,
    },
    #[error("invalid oversampling target {0:?}")]
    InvalidTarget(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, ImbalanceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightTable {
    pub weights: Vec<f64>,
    pub constants: Vec<f64>,
    pub counts: Vec<usize>,
    pub num_classes: usize,
}

impl ClassWeightTable {
    /// Unit weights, i.e. plain cross-entropy.
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            weights: vec![1.0; num_classes],
            constants: vec![1.0; num_classes],
            counts: Vec::new(),
            num_classes,
        }
    }
}

/// `w(c) = C_c · Σn / (N · n_c)`. `constants` defaults to all ones.
pub fn class_weights(counts: &[usize], constants: Option<&[f64]>) -> Result<ClassWeightTable> {
    let n = counts.len();
    let constants = match constants {
        Some(c) if c.len() != n => {
            return Err(ImbalanceError::ClassCount {
                expected: n,
                got: c.len(),
            })
        }
        Some(c) => c.to_vec(),
        None => vec![1.0; n],
    };
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(ImbalanceError::EmptyClass(c));
    }
    let total: usize = counts.iter().sum();
    let weights = counts
        .iter()
        .zip(&constants)
        .map(|(&nc, &cc)| cc * total as f64 / (n as f64 * nc as f64))
        .collect();
    Ok(ClassWeightTable {
        weights,
        constants,
        counts: counts.to_vec(),
        num_classes: n,
    })
}

/// Ranges for random rotation (degrees), isotropic scale and per-axis shift
/// (pixels). Pixels mapped from outside the frame take `fill`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentSpec {
    pub rotation_deg: f64,
    pub scale: [f64; 2],
    pub shift_px: f64,
    pub fill: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            scale: [0.9, 1.1],
            shift_px: 12.0,
            fill: 0.0,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// The identity transform.
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: [1.0, 1.0],
            shift_px: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ImbalanceError::InvalidSpec(msg));
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return bad(format!("rotation_deg {} must be finite and >= 0", self.rotation_deg));
        }
        let [lo, hi] = self.scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("scale range [{lo}, {hi}] must satisfy 0 < lo <= hi"));
        }
        if !(self.shift_px >= 0.0 && self.shift_px.is_finite()) {
            return bad(format!("shift_px {} must be finite and >= 0", self.shift_px));
        }
        if !self.fill.is_finite() {
            return bad("fill must be finite".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> std::result::Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Parameters of one drawn transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub angle_deg: f64,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Affine {
    pub fn draw<R: Rng + ?Sized>(spec: &AugmentSpec, rng: &mut R) -> Self {
        Self {
            angle_deg: rng::uniform(rng, -spec.rotation_deg, spec.rotation_deg),
            scale: rng::uniform(rng, spec.scale[0], spec.scale[1]),
            dx: rng::uniform(rng, -spec.shift_px, spec.shift_px),
            dy: rng::uniform(rng, -spec.shift_px, spec.shift_px),
        }
    }
}

/// Rotates and scales about the image centre, then shifts. Each output pixel
/// is pulled back through the inverse map and sampled bilinearly; neighbours
/// outside the frame contribute `fill`.
pub fn apply_affine(img: &GrayImage, t: &Affine, fill: f64) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = t.angle_deg.to_radians().sin_cos();
    let pixel = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            fill
        } else {
            img.get(x as usize, y as usize)
        }
    };
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let px = x as f64 - cx - t.dx;
            let py = y as f64 - cy - t.dy;
            let sx = (cos * px + sin * py) / t.scale + cx;
            let sy = (-sin * px + cos * py) / t.scale + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let top = pixel(x0, y0) * (1.0 - fx) + pixel(x0 + 1, y0) * fx;
            let bottom = pixel(x0, y0 + 1) * (1.0 - fx) + pixel(x0 + 1, y0 + 1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    GrayImage::new(w, h, data).expect("dimensions unchanged")
}

/// Draws a transform from `spec` and applies it. Output dimensions match the input.
pub fn transform_sample<R: Rng + ?Sized>(img: &GrayImage, spec: &AugmentSpec, rng: &mut R) -> GrayImage {
    let t = Affine::draw(spec, rng);
    apply_affine(img, &t, spec.fill)
}

/// Per-class training count to oversample up to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OversampleTarget {
    /// The largest current class count.
    Max,
    Uniform(usize),
    PerClass(Vec<usize>),
}

impl OversampleTarget {
    pub fn resolve(&self, counts: &[usize]) -> Result<Vec<usize>> {
        let targets = match self {
            OversampleTarget::Max => vec![counts.iter().copied().max().unwrap_or(0); counts.len()],
            OversampleTarget::Uniform(t) => vec![*t; counts.len()],
            OversampleTarget::PerClass(t) if t.len() != counts.len() => {
                return Err(ImbalanceError::ClassCount {
                    expected: counts.len(),
                    got: t.len(),
                })
            }
            OversampleTarget::PerClass(t) => t.clone(),
        };
        for (class, (&target, &current)) in targets.iter().zip(counts).enumerate() {
            if target < current {
                return Err(ImbalanceError::TargetBelowCurrent { class, target, current });
            }
            if target > 0 && current == 0 {
                return Err(ImbalanceError::EmptyClass(class));
            }
        }
        Ok(targets)
    }
}

impl FromStr for OversampleTarget {
    type Err = ImbalanceError;

    /// `max`, a single count, or comma-separated per-class counts.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("max") {
            return Ok(OversampleTarget::Max);
        }
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| ImbalanceError::InvalidTarget(s.to_string()))?;
        match parts.as_slice() {
            [t] => Ok(OversampleTarget::Uniform(*t)),
            _ => Ok(OversampleTarget::PerClass(parts)),
        }
    }
}

/// One synthesized record: the manifest index it is derived from and its class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedSample {
    pub source_index: usize,
    pub class: usize,
}

/// Chooses, per class, source training records uniformly with replacement
/// until the class reaches its target. Indices refer to `manifest.records`.
pub fn plan_oversample(
    manifest: &Manifest,
    scheme: LabelScheme,
    target: &OversampleTarget,
    seed: u64,
) -> Result<Vec<PlannedSample>> {
    let labels = manifest.labels(scheme);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); scheme.num_classes()];
    for (i, r) in manifest.records.iter().enumerate() {
        if r.split == Split::Train {
            by_class[labels[i]].push(i);
        }
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let targets = target.resolve(&counts)?;
    let mut plan = Vec::new();
    for (class, pool) in by_class.iter().enumerate() {
        let mut rng = rng::derived(seed, class as u64);
        for _ in counts[class]..targets[class] {
            plan.push(PlannedSample {
                source_index: pool[rng.random_range(0..pool.len())],
                class,
            });
        }
    }
    Ok(plan)
}

/// Stream offset separating per-record transform seeds from the selection streams.
const TRANSFORM_STREAM: u64 = 1 << 32;

/// Oversamples the training split. Synthesized images are written to
/// `out_dir` as `aug_c<class>_<n>.png`; their records copy the source and
/// finding of the record they derive from. Validation and test records are
/// passed through unchanged.
pub fn oversample(
    manifest: &Manifest,
    scheme: LabelScheme,
    spec: &AugmentSpec,
    target: &OversampleTarget,
    data_root: &Path,
    out_dir: &Path,
) -> Result<Manifest> {
    spec.validate()?;
    let plan = plan_oversample(manifest, scheme, target, spec.seed)?;
    std::fs::create_dir_all(out_dir).map_err(|source| ImagingError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut records = manifest.records.clone();
    let mut cache: std::collections::HashMap<usize, GrayImage> = Default::default();
    let mut per_class = vec![0usize; scheme.num_classes()];
    for (n, item) in plan.iter().enumerate() {
        let src = &manifest.records[item.source_index];
        let img = match cache.entry(item.source_index) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert(GrayImage::load(src.resolve(data_root))?),
        };
        let mut rng = rng::derived(spec.seed, TRANSFORM_STREAM + n as u64);
        let out = transform_sample(img, spec, &mut rng);
        let name = format!("aug_c{}_{:05}.png", item.class, per_class[item.class]);
        per_class[item.class] += 1;
        let path: PathBuf = out_dir.join(name);
        out.save(&path)?;
        let mut record = SampleRecord::new(path.to_string_lossy().into_owned(), src.source, src.finding);
        record.split = Split::Train;
        records.push(record);
    }
    let mut result = Manifest::new(records)?;
    result.seed = Some(spec.seed);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_examples() {
        let t = class_weights(&[906, 88], None).unwrap();
        assert!((t.weights[0] - 994.0 / 1812.0).abs() < 1e-15);
        assert!((t.weights[1] - 994.0 / 176.0).abs() < 1e-15);
        assert!((t.weights[0] - 0.548565).abs() < 1e-6);
        assert!((t.weights[1] - 5.647727).abs() < 1e-6);
        assert_eq!(class_weights(&[500, 500], None).unwrap().weights, vec![1.0, 1.0]);
        assert!(matches!(
            class_weights(&[3, 0], None),
            Err(ImbalanceError::EmptyClass(1))
        ));
        let scaled = class_weights(&[906, 88], Some(&[2.0, 0.5])).unwrap();
        assert!((scaled.weights[0] - 2.0 * t.weights[0]).abs() < 1e-15);
    }

    #[test]
    fn identity_and_full_turn() {
        let img = GrayImage::from_fn(9, 7, |x, y| (x * 13 + y * 29) as f64 % 255.0).unwrap();
        let mut r = rng::seeded(1);
        let out = transform_sample(&img, &AugmentSpec::identity(), &mut r);
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
        let turn = Affine {
            angle_deg: 360.0,
            scale: 1.0,
            dx: 0.0,
            dy: 0.0,
        };
        let out = apply_affine(&img, &turn, 0.0);
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn shift_moves_a_bright_pixel() {
        let img = GrayImage::from_fn(11, 11, |x, y| if (x, y) == (4, 5) { 255.0 } else { 0.0 }).unwrap();
        let t = Affine {
            angle_deg: 0.0,
            scale: 1.0,
            dx: 3.0,
            dy: 0.0,
        };
        let out = apply_affine(&img, &t, 0.0);
        assert_eq!(out.get(7, 5), 255.0);
        assert_eq!(out.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn fill_applies_outside_frame() {
        let img = GrayImage::filled(6, 6, 100.0).unwrap();
        let t = Affine {
            angle_deg: 0.0,
            scale: 1.0,
            dx: -2.0,
            dy: 0.0,
        };
        let out = apply_affine(&img, &t, 7.0);
        assert_eq!(out.get(5, 0), 7.0);
        assert_eq!(out.get(0, 0), 100.0);
    }

    #[test]
    fn spec_validation_and_json() {
        assert!(AugmentSpec::default().validate().is_ok());
        let bad = AugmentSpec {
            scale: [0.0, 1.0],
            ..AugmentSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentSpec {
            scale: [1.2, 1.0],
            ..AugmentSpec::default()
        };
        assert!(bad.validate().is_err());
        let parsed: AugmentSpec = serde_json::from_str(r#"{"rotation_deg": 5.0, "seed": 3}"#).unwrap();
        assert_eq!(parsed.scale, [0.9, 1.1]);
        assert_eq!(parsed.seed, 3);
    }

    #[test]
    fn target_parsing_and_resolution() {
        assert_eq!("max".parse::<OversampleTarget>().unwrap(), OversampleTarget::Max);
        assert_eq!(
            "960".parse::<OversampleTarget>().unwrap(),
            OversampleTarget::Uniform(960)
        );
        assert_eq!(
            "437, 437".parse::<OversampleTarget>().unwrap(),
            OversampleTarget::PerClass(vec![437, 437])
        );
        assert!("lots".parse::<OversampleTarget>().is_err());
        assert_eq!(OversampleTarget::Max.resolve(&[5, 9]).unwrap(), vec![9, 9]);
        assert!(matches!(
            OversampleTarget::Uniform(8).resolve(&[5, 9]),
            Err(ImbalanceError::TargetBelowCurrent {
                class: 1,
                target: 8,
                current: 9
            })
        ));
    }

    proptest! {
        #[test]
        fn weighted_count_identity(counts in proptest::collection::vec(1usize..5000, 1..6)) {
            let t = class_weights(&counts, None).unwrap();
            let total: usize = counts.iter().sum();
            let weighted: f64 = counts.iter().zip(&t.weights).map(|(&n, w)| n as f64 * w).sum();
            prop_assert!((weighted - total as f64).abs() <= 1e-9 * total as f64);
            prop_assert!(t.weights.iter().all(|&w| w > 0.0));
        }

        #[test]
        fn weights_are_scale_invariant(
            counts in proptest::collection::vec(1usize..5000, 1..6),
            factor in 2usize..5,
        ) {
            let a = class_weights(&counts, None).unwrap();
            let scaled: Vec<usize> = counts.iter().map(|c| c * factor).collect();
            let b = class_weights(&scaled, None).unwrap();
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!((x - y).abs() <= 1e-12 * x);
            }
        }

        #[test]
        fn transform_keeps_dimensions(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let img = GrayImage::filled(w, h, 50.0).unwrap();
            let out = transform_sample(&img, &AugmentSpec::default(), &mut rng::seeded(seed));
            prop_assert_eq!((out.width(), out.height()), (w, h));
        }
    }
}
