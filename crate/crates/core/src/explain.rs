//! Grad-CAM heatmaps, grid-superpixel LIME and colour overlays.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{quantize, GrayImage, ImagingError};
use crate::metrics::softmax_unchecked;
use crate::model::{image_to_input, ModelError, Network, Tap};
use crate::rng;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },
    #[error("{got} perturbations given, at least {need} needed")]
    TooFewPerturbations { got: usize, need: usize },
    #[error("invalid grid {rows}x{cols} for a {width}x{height} image")]
    InvalidGrid {
        rows: usize,
        cols: usize,
        width: usize,
        height: usize,
    },
    #[error("least-squares fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, ExplainError>;

/// Anything that maps a grayscale image to class probabilities.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn predict_image(&self, img: &GrayImage) -> Result<Vec<f64>>;
}

impl Classifier for Network {
    fn num_classes(&self) -> usize {
        Network::num_classes(self)
    }

    fn predict_image(&self, img: &GrayImage) -> Result<Vec<f64>> {
        Ok(self.predict_sample(&image_to_input(img, self.spec().input)?)?)
    }
}

/// Wraps a closure as a [`Classifier`].
pub struct FnClassifier<F> {
    pub num_classes: usize,
    pub f: F,
}

impl<F: Fn(&GrayImage) -> Vec<f64>> Classifier for FnClassifier<F> {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_image(&self, img: &GrayImage) -> Result<Vec<f64>> {
        Ok((self.f)(img))
    }
}

fn check_class(class: usize, num_classes: usize) -> Result<()> {
    if class >= num_classes {
        return Err(ExplainError::InvalidClass { class, num_classes });
    }
    Ok(())
}

/// Per-pixel relevance in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    /// Min-max normalisation; a constant map becomes all zeros.
    pub fn normalized(width: usize, height: usize, mut values: Vec<f64>) -> Self {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 0.0 {
            values.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
        }
        Self { width, height, values }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Fraction of the total heatmap mass on pixels where `inside` holds.
    pub fn mass_fraction(&self, inside: impl Fn(usize, usize) -> bool) -> f64 {
        let total: f64 = self.values.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut hit = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                if inside(x, y) {
                    hit += self.get(x, y);
                }
            }
        }
        hit / total
    }
}

/// Bilinear upsampling with pixel-centre alignment and edge clamping.
fn upsample(map: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64)
    };
    let mut out = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let sy = coord(oy, h, out_h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = coord(ox, w, out_w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
            let bottom = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Grad-CAM on the `tap` tensor of `block` (0-based; `None` selects the
/// last block). Channel weights are the spatial means of
/// the target-logit gradient; the map is the ReLU of the weighted channel
/// sum, upsampled to the image and min-max normalised.
pub fn grad_cam(
    net: &Network,
    img: &GrayImage,
    target_class: usize,
    block: Option<usize>,
    tap: Tap,
) -> Result<Heatmap> {
    let [_, h, w] = net.spec().input;
    if !img.same_dims(w, h) {
        return Err(ExplainError::ShapeMismatch(format!(
            "image {}x{} for network input {w}x{h}",
            img.width(),
            img.height()
        )));
    }
    check_class(target_class, net.num_classes())?;
    let blocks = net.spec().blocks();
    let block = block.unwrap_or(blocks.len() - 1);
    if block >= blocks.len() {
        return Err(ExplainError::ShapeMismatch(format!("no block {block}")));
    }
    let mut probe = net.clone();
    probe.freeze(&["all"])?;
    let cache = probe.forward_sample(&image_to_input(img, net.spec().input)?)?;
    let mut dlogits = vec![0.0; net.num_classes()];
    dlogits[target_class] = 1.0;
    let mut grads = probe.zero_grads();
    let dact = probe
        .backward_sample(&cache, &dlogits, &mut grads, Some((block, tap)))
        .expect("hook requested");
    let shape = blocks[block];
    let (channels, cw, ch) = match tap {
        Tap::Activation => (shape.conv_channels, shape.width, shape.height),
        Tap::Output => (shape.out_channels, shape.out_width, shape.out_height),
    };
    let hw = cw * ch;
    let act = cache.tapped(block, tap);
    let mut cam = vec![0.0; hw];
    for k in 0..channels {
        let g = &dact[k * hw..(k + 1) * hw];
        let alpha = g.iter().sum::<f64>() / hw as f64;
        for (c, a) in cam.iter_mut().zip(&act[k * hw..(k + 1) * hw]) {
            *c += alpha * a;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let up = upsample(&cam, cw, ch, img.width(), img.height());
    Ok(Heatmap::normalized(img.width(), img.height(), up))
}

/// Intensity given to switched-off superpixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OcclusionFill {
    Zero,
    /// Mean intensity of the explained image.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub rows: usize,
    pub cols: usize,
    pub num_perturbations: usize,
    pub seed: u64,
    pub fill: OcclusionFill,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 8,
            num_perturbations: 1000,
            seed: 0,
            fill: OcclusionFill::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeExplanation {
    pub grid: (usize, usize),
    pub width: usize,
    pub height: usize,
    pub target_class: usize,
    /// Row-major weight per grid cell; positive supports the target class.
    pub segment_weights: Vec<f64>,
    pub intercept: f64,
    /// Weighted coefficient of determination; `None` for a constant response.
    pub r2: Option<f64>,
    /// Target-class probability on the unperturbed image.
    pub prediction: f64,
    pub num_perturbations: usize,
    pub seed: u64,
}

impl LimeExplanation {
    /// Surrogate prediction with every segment switched on.
    pub fn surrogate_full(&self) -> f64 {
        self.intercept + self.segment_weights.iter().sum::<f64>()
    }
}

/// Grid cell index of every pixel, row-major over `rows × cols` cells.
pub fn grid_segments(width: usize, height: usize, rows: usize, cols: usize) -> Result<Vec<usize>> {
    if rows == 0 || cols == 0 || rows > height || cols > width {
        return Err(ExplainError::InvalidGrid {
            rows,
            cols,
            width,
            height,
        });
    }
    let mut seg = Vec::with_capacity(width * height);
    for y in 0..height {
        let r = y * rows / height;
        for x in 0..width {
            seg.push(r * cols + x * cols / width);
        }
    }
    Ok(seg)
}

/// Kernel width on the number of switched-off segments.
pub fn kernel_width(segments: usize) -> f64 {
    (segments as f64).sqrt() * 0.75
}

/// LIME with fixed grid superpixels. The first perturbation keeps every
/// segment on, the rest switch each segment on with probability one half.
/// A weighted least-squares surrogate is fitted with sample weights
/// `exp(-d / width²)`, `d` being the number of segments switched off.
pub fn lime_explain(
    model: &dyn Classifier,
    img: &GrayImage,
    target_class: usize,
    cfg: &LimeConfig,
) -> Result<LimeExplanation> {
    check_class(target_class, model.num_classes())?;
    let (w, h) = (img.width(), img.height());
    let segments = grid_segments(w, h, cfg.rows, cfg.cols)?;
    let s = cfg.rows * cfg.cols;
    if cfg.num_perturbations < s + 1 {
        return Err(ExplainError::TooFewPerturbations {
            got: cfg.num_perturbations,
            need: s + 1,
        });
    }
    let fill = match cfg.fill {
        OcclusionFill::Zero => 0.0,
        OcclusionFill::Mean => img.mean(),
    };
    let mut rng = rng::seeded(cfg.seed);
    let mut masks: Vec<Vec<bool>> = vec![vec![true; s]];
    for _ in 1..cfg.num_perturbations {
        masks.push((0..s).map(|_| rng.random::<bool>()).collect());
    }
    let mut responses = Vec::with_capacity(masks.len());
    for mask in &masks {
        let data = img
            .data()
            .iter()
            .zip(&segments)
            .map(|(&v, &seg)| if mask[seg] { v } else { fill })
            .collect();
        let perturbed = GrayImage::new(w, h, data)?;
        let probs = model.predict_image(&perturbed)?;
        responses.push(probs[target_class]);
    }
    let width2 = kernel_width(s).powi(2);
    let kernel: Vec<f64> = masks
        .iter()
        .map(|m| (-(m.iter().filter(|on| !**on).count() as f64) / width2).exp())
        .collect();
    let n = masks.len();
    let x = DMatrix::from_fn(n, s + 1, |i, j| {
        let v = if j == 0 || masks[i][j - 1] { 1.0 } else { 0.0 };
        v * kernel[i].sqrt()
    });
    let y = DVector::from_fn(n, |i, _| responses[i] * kernel[i].sqrt());
    let beta = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| ExplainError::Fit(e.to_string()))?;
    let total_w: f64 = kernel.iter().sum();
    let mean = kernel.iter().zip(&responses).map(|(k, r)| k * r).sum::<f64>() / total_w;
    let ss_tot: f64 = kernel.iter().zip(&responses).map(|(k, r)| k * (r - mean).powi(2)).sum();
    let spread = responses.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - responses.iter().cloned().fold(f64::INFINITY, f64::min);
    let r2 = if spread > 1e-12 {
        let fitted = &x * &beta;
        let ss_res: f64 = (0..n).map(|i| (y[i] - fitted[i]).powi(2)).sum();
        Some((1.0 - ss_res / ss_tot).clamp(0.0, 1.0))
    } else {
        None
    };
    Ok(LimeExplanation {
        grid: (cfg.rows, cfg.cols),
        width: w,
        height: h,
        target_class,
        segment_weights: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        r2,
        prediction: responses[0],
        num_perturbations: n,
        seed: cfg.seed,
    })
}

/// Perceptually ordered colormap sampled at nine evenly spaced stops.
const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

pub fn colormap(v: f64) -> [f64; 3] {
    let t = v.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [0, 1, 2].map(|c| a[c] * (1.0 - f) + b[c] * f)
}

pub enum Overlay<'a> {
    Heatmap(&'a Heatmap),
    Lime(&'a LimeExplanation),
}

/// Colour composite of `img` and an explanation. A heatmap is blended at
/// 50% through the colormap; LIME tints each segment green (positive) or
/// red (negative) with opacity `0.5 · |w| / max |w|`.
pub fn overlay_rgb(img: &GrayImage, overlay: &Overlay<'_>) -> Result<image::RgbImage> {
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = match overlay {
        Overlay::Heatmap(m) => (m.width, m.height),
        Overlay::Lime(l) => (l.width, l.height),
    };
    if (ow, oh) != (w, h) {
        return Err(ExplainError::ShapeMismatch(format!(
            "overlay {ow}x{oh} for image {w}x{h}"
        )));
    }
    let mut out = image::RgbImage::new(w as u32, h as u32);
    let mut put = |i: usize, rgb: [f64; 3]| {
        out.put_pixel((i % w) as u32, (i / w) as u32, image::Rgb(rgb.map(quantize)));
    };
    match overlay {
        Overlay::Heatmap(m) => {
            for (i, (&g, &v)) in img.data().iter().zip(&m.values).enumerate() {
                let c = colormap(v);
                put(i, c.map(|c| 0.5 * g + 0.5 * c));
            }
        }
        Overlay::Lime(l) => {
            let segments = grid_segments(w, h, l.grid.0, l.grid.1)?;
            let max = l.segment_weights.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (i, (&g, &seg)) in img.data().iter().zip(&segments).enumerate() {
                let wgt = l.segment_weights[seg];
                let alpha = if max > 0.0 { 0.5 * wgt.abs() / max } else { 0.0 };
                let tint = if wgt >= 0.0 {
                    [0.0, 255.0, 0.0]
                } else {
                    [255.0, 0.0, 0.0]
                };
                put(i, tint.map(|t| (1.0 - alpha) * g + alpha * t));
            }
        }
    }
    Ok(out)
}

pub fn render_overlay(img: &GrayImage, overlay: &Overlay<'_>, out_path: &Path) -> Result<()> {
    let rgb = overlay_rgb(img, overlay)?;
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| ExplainError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    rgb.save_with_format(out_path, image::ImageFormat::Png)
        .map_err(|source| ExplainError::Encode {
            path: out_path.display().to_string(),
            source,
        })
}

/// Writes `value` as pretty JSON next to an overlay.
pub fn write_sidecar<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("explanations serialise");
    std::fs::write(path, json).map_err(|source| ExplainError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Class probabilities for an image under a network, for reporting.
pub fn class_probabilities(net: &Network, img: &GrayImage) -> Result<Vec<f64>> {
    let logits = net.logits(&image_to_input(img, net.spec().input)?)?;
    Ok(softmax_unchecked(&logits))
}
