//! Adaptive total-variation denoising with a log-likelihood fidelity term.
//!
//! The denoised image minimises
//!
//! ```text
//! E(u) = Σ (u − f·ln u) + Σ ω·sqrt(ux² + uy² + eps²)
//! ω    = 1 / (1 + k·|∇(G_σ ∗ f)|)
//! ```
//!
//! where `ux`, `uy` are forward differences (zero across the last column/row)
//! and `ω` is evaluated once from the observed image and then held fixed.
//! With fixed `ω` the energy is convex in `u`, so plain gradient descent with
//! step rejection decreases it monotonically.
//!
//! The fidelity term needs `u > 0`; intensities are shifted into `[1, 256]`
//! before optimisation and shifted back afterwards.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{GrayImage, MAX_INTENSITY};

/// Offset applied before optimisation so that `ln u` is defined everywhere.
const INTENSITY_OFFSET: f64 = 1.0;
/// Lower bound applied to every descent iterate.
const POSITIVE_FLOOR: f64 = 1e-6;
/// Consecutive energy increases tolerated before the solver gives up.
const MAX_CONSECUTIVE_INCREASES: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum DenoiseError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("u must be strictly positive; pixel {index} is {value}")]
    NonPositiveU { index: usize, value: f64 },
    #[error("dimension mismatch between u, f and the weight field")]
    DimensionMismatch,
    #[error("energy increased for {0} consecutive iterations; reduce the step")]
    Diverged(usize),
}

pub type Result<T> = std::result::Result<T, DenoiseError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TVParams {
    /// Contrast parameter of the edge-stopping weight.
    pub k: f64,
    /// Standard deviation of the pre-smoothing Gaussian, in pixels.
    pub sigma: f64,
    pub step: f64,
    pub max_iters: usize,
    /// Relative energy change below which descent stops.
    pub tol: f64,
    /// Smooths the gradient magnitude at zero.
    pub eps: f64,
}

impl Default for TVParams {
    fn default() -> Self {
        Self {
            k: 0.05,
            sigma: 1.5,
            step: 0.05,
            max_iters: 60,
            tol: 1e-6,
            eps: 1e-3,
        }
    }
}

impl TVParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("k", self.k),
            ("sigma", self.sigma),
            ("step", self.step),
            ("eps", self.eps),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DenoiseError::InvalidParam { name, value });
            }
        }
        if !(self.tol >= 0.0) {
            return Err(DenoiseError::InvalidParam {
                name: "tol",
                value: self.tol,
            });
        }
        Ok(())
    }
}

/// Per-pixel edge-stopping weight, each value in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl WeightField {
    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

/// Energy after every accepted descent iteration; entry 0 is the initial energy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyTrace {
    pub energies: Vec<f64>,
}

impl EnergyTrace {
    pub fn is_non_increasing(&self) -> bool {
        self.energies.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,energy\n");
        for (i, e) in self.energies.iter().enumerate() {
            out.push_str(&format!("{i},{e}\n"));
        }
        out
    }
}

/// Half-sample symmetric index: `… b a | a b c … | c b …`, valid for any offset.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn blur_raw(width: usize, height: usize, data: &[f64], sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (j, kv) in kernel.iter().enumerate() {
                acc += kv * row[reflect(x as isize + j as isize - radius, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (j, kv) in kernel.iter().enumerate() {
                acc += kv * tmp[reflect(y as isize + j as isize - radius, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with a `ceil(3σ)`-radius kernel normalised to sum 1
/// and half-sample symmetric padding, which preserves total intensity.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DenoiseError::InvalidParam {
            name: "sigma",
            value: sigma,
        });
    }
    let out = blur_raw(img.width(), img.height(), img.data(), sigma);
    Ok(GrayImage::from_clamped(img.width(), img.height(), out).expect("dims unchanged"))
}

#[inline]
fn forward_diffs(width: usize, height: usize, u: &[f64], i: usize) -> (f64, f64) {
    let (x, y) = (i % width, i / width);
    let ux = if x + 1 < width { u[i + 1] - u[i] } else { 0.0 };
    let uy = if y + 1 < height { u[i + width] - u[i] } else { 0.0 };
    (ux, uy)
}

fn grad_magnitude_raw(width: usize, height: usize, u: &[f64], eps: f64) -> Vec<f64> {
    (0..u.len())
        .map(|i| {
            let (ux, uy) = forward_diffs(width, height, u, i);
            (ux * ux + uy * uy + eps * eps).sqrt()
        })
        .collect()
}

/// `sqrt(ux² + uy² + eps²)` per pixel with forward differences. The result is
/// a magnitude field and is not clamped to the intensity range.
pub fn grad_magnitude(img: &GrayImage, eps: f64) -> Result<Vec<f64>> {
    if !(eps >= 0.0) {
        return Err(DenoiseError::InvalidParam {
            name: "eps",
            value: eps,
        });
    }
    Ok(grad_magnitude_raw(img.width(), img.height(), img.data(), eps))
}

fn edge_weight_raw(width: usize, height: usize, data: &[f64], k: f64, sigma: f64) -> Vec<f64> {
    let smoothed = blur_raw(width, height, data, sigma);
    grad_magnitude_raw(width, height, &smoothed, 0.0)
        .into_iter()
        .map(|g| 1.0 / (1.0 + k * g))
        .collect()
}

/// `ω = 1 / (1 + k·|∇(G_σ ∗ img)|)`.
pub fn edge_weight(img: &GrayImage, p: &TVParams) -> Result<WeightField> {
    p.validate()?;
    Ok(WeightField {
        width: img.width(),
        height: img.height(),
        data: edge_weight_raw(img.width(), img.height(), img.data(), p.k, p.sigma),
    })
}

fn energy_raw(width: usize, height: usize, u: &[f64], f: &[f64], omega: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..u.len() {
        let (ux, uy) = forward_diffs(width, height, u, i);
        total += u[i] - f[i] * u[i].ln() + omega[i] * (ux * ux + uy * uy + eps * eps).sqrt();
    }
    total
}

/// Discrete energy of `u` for observation `f` under weights `omega`.
pub fn tv_energy(u: &GrayImage, f: &GrayImage, omega: &WeightField, eps: f64) -> Result<f64> {
    tv_energy_raw(u.width(), u.height(), u.data(), f.data(), omega, eps)
}

/// [`tv_energy`] on raw buffers, for iterates that live outside `[0, 255]`.
pub fn tv_energy_raw(width: usize, height: usize, u: &[f64], f: &[f64], omega: &WeightField, eps: f64) -> Result<f64> {
    let n = width * height;
    if u.len() != n || f.len() != n || omega.data.len() != n || omega.width != width {
        return Err(DenoiseError::DimensionMismatch);
    }
    if let Some((index, &value)) = u.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(DenoiseError::NonPositiveU { index, value });
    }
    Ok(energy_raw(width, height, u, f, &omega.data, eps))
}

/// ∂E/∂u: fidelity `1 − f/u` plus the negative divergence of `ω∇u/|∇u|`.
fn energy_gradient(width: usize, height: usize, u: &[f64], f: &[f64], omega: &[f64], eps: f64, out: &mut [f64]) {
    let n = u.len();
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    for i in 0..n {
        let (ux, uy) = forward_diffs(width, height, u, i);
        let scale = omega[i] / (ux * ux + uy * uy + eps * eps).sqrt();
        px[i] = scale * ux;
        py[i] = scale * uy;
    }
    for i in 0..n {
        let (x, y) = (i % width, i / width);
        let mut g = 1.0 - f[i] / u[i] - px[i] - py[i];
        if x > 0 {
            g += px[i - 1];
        }
        if y > 0 {
            g += py[i - width];
        }
        out[i] = g;
    }
}

/// Gradient descent on the adaptive TV energy.
///
/// Each iteration tries `u − step·∂E/∂u` (floored to stay positive). A trial
/// that raises the energy is rejected and the step halved; five rejections in
/// a row is reported as divergence. A trial whose increase is within rounding
/// of the current energy ends the descent as converged. Otherwise the
/// iterate is accepted, and descent stops once the relative energy decrease
/// falls below `tol`.
pub fn tv_denoise(f: &GrayImage, p: &TVParams) -> Result<(GrayImage, EnergyTrace)> {
    p.validate()?;
    let (w, h) = (f.width(), f.height());
    let shifted: Vec<f64> = f.data().iter().map(|v| v + INTENSITY_OFFSET).collect();
    let omega = edge_weight_raw(w, h, &shifted, p.k, p.sigma);

    let mut u: Vec<f64> = shifted.iter().map(|&v| v.max(POSITIVE_FLOOR)).collect();
    let mut energy = energy_raw(w, h, &u, &shifted, &omega, p.eps);
    let mut trace = EnergyTrace { energies: vec![energy] };
    let mut grad = vec![0.0; u.len()];
    let mut trial = vec![0.0; u.len()];
    let mut step = p.step;
    let mut increases = 0;

    for _ in 0..p.max_iters {
        energy_gradient(w, h, &u, &shifted, &omega, p.eps, &mut grad);
        for ((t, &ui), &gi) in trial.iter_mut().zip(&u).zip(&grad) {
            *t = (ui - step * gi).max(POSITIVE_FLOOR);
        }
        let candidate = energy_raw(w, h, &trial, &shifted, &omega, p.eps);
        if !candidate.is_finite() || candidate > energy {
            if candidate.is_finite() && candidate - energy <= 1e-12 * energy.abs().max(1.0) {
                break;
            }
            increases += 1;
            if increases >= MAX_CONSECUTIVE_INCREASES {
                return Err(DenoiseError::Diverged(increases));
            }
            step *= 0.5;
            continue;
        }
        increases = 0;
        std::mem::swap(&mut u, &mut trial);
        let decrease = energy - candidate;
        energy = candidate;
        trace.energies.push(energy);
        if decrease / energy.abs().max(1.0) < p.tol {
            break;
        }
    }

    let out = u.iter().map(|v| v - INTENSITY_OFFSET).collect();
    Ok((GrayImage::from_clamped(w, h, out).expect("dims unchanged"), trace))
}

/// Peak signal-to-noise ratio against a reference, in dB (peak 255).
pub fn psnr(reference: &GrayImage, test: &GrayImage) -> f64 {
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / reference.len() as f64;
    10.0 * (MAX_INTENSITY * MAX_INTENSITY / mse).log10()
}
