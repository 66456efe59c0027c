//! Grayscale rasters and the mask / inpaint / resize / histogram stages of
//! radiograph preprocessing.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

pub const MAX_INTENSITY: f64 = 255.0;

/// Default convergence threshold for [`inpaint`], in intensity units.
pub const DEFAULT_INPAINT_TOL: f64 = 0.01;
pub const DEFAULT_INPAINT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
    #[error("pixel buffer has {actual} values, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("pixel {index} has value {value}, outside [0, 255]")]
    OutOfRange { index: usize, value: f64 },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("every pixel is masked; nothing to interpolate from")]
    AllMasked,
    #[error("threshold min {min_th} exceeds max {max_th}")]
    InvalidThreshold { min_th: f64, max_th: f64 },
    #[error("histogram needs at least one bin")]
    ZeroBins,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// Row-major grayscale raster with floating-point intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    /// Bit depth of the file the image was decoded from (8 for synthetic data).
    pub bit_depth: u8,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::ZeroDimension { width, height });
        }
        if data.len() != width * height {
            return Err(ImagingError::BufferLength {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > MAX_INTENSITY)
        {
            return Err(ImagingError::OutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
            bit_depth: 8,
        })
    }

    /// Builds an image, clamping every value into `[0, 255]` (NaN becomes 0).
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, MAX_INTENSITY) };
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_clamped(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Decodes PNG or binary PGM. RGB(A) input is reduced to luma with the
    /// 0.299/0.587/0.114 weights; 16-bit input is rescaled to `[0, 255]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ImagingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let decoded = image::load_from_memory(&bytes).map_err(|source| ImagingError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_dynamic(decoded)
    }

    fn from_dynamic(img: DynamicImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (data, depth): (Vec<f64>, u8) = match img {
            DynamicImage::ImageLuma8(buf) => (buf.into_raw().into_iter().map(f64::from).collect(), 8),
            DynamicImage::ImageLuma16(buf) => (
                buf.into_raw()
                    .into_iter()
                    .map(|v| f64::from(v) * MAX_INTENSITY / 65535.0)
                    .collect(),
                16,
            ),
            DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
                let buf = img.to_luma16();
                (
                    buf.into_raw()
                        .into_iter()
                        .map(|v| f64::from(v) * MAX_INTENSITY / 65535.0)
                        .collect(),
                    16,
                )
            }
            other => {
                let rgb = other.to_rgb8();
                (
                    rgb.pixels()
                        .map(|p| luma(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])))
                        .collect(),
                    8,
                )
            }
        };
        let mut out = Self::from_clamped(w, h, data)?;
        out.bit_depth = depth;
        Ok(out)
    }

    /// 8-bit quantisation used on every write: round half to even, clamp.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// Writes 8-bit grayscale; `.pgm`/`.pnm` selects binary P5, anything else PNG.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| ImagingError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(io_err)?;
            }
        }
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm") | Some("pnm")) {
            let mut f = fs::File::create(path).map_err(io_err)?;
            write!(f, "P5\n{} {}\n255\n", self.width, self.height).map_err(io_err)?;
            f.write_all(&self.to_u8()).map_err(io_err)?;
            return Ok(());
        }
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, ImageFormat::Png)
            .map_err(|source| ImagingError::Decode {
                path: path.display().to_string(),
                source,
            })
    }
}

pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round_ties_even().clamp(0.0, MAX_INTENSITY) as u8
}

/// Artifact membership per pixel; `true` marks a pixel to be inpainted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(ImagingError::BufferLength {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    /// Renders the mask in the intensity domain: `max_th` where set, 0 elsewhere.
    pub fn render(&self, max_th: f64) -> GrayImage {
        let data = self.data.iter().map(|&m| if m { max_th } else { 0.0 }).collect();
        GrayImage::from_clamped(self.width, self.height, data).expect("mask has valid dims")
    }
}

/// Thresholds of the artifact mask. Only `min_th` decides membership;
/// `max_th` is the value a rendered mask carries.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ThresholdParams {
    pub min_th: f64,
    pub max_th: f64,
}

impl ThresholdParams {
    pub fn new(min_th: f64, max_th: f64) -> Result<Self> {
        let p = Self { min_th, max_th };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (0.0..=MAX_INTENSITY).contains(&v);
        if !in_range(self.min_th) || !in_range(self.max_th) || self.min_th > self.max_th {
            return Err(ImagingError::InvalidThreshold {
                min_th: self.min_th,
                max_th: self.max_th,
            });
        }
        Ok(())
    }
}

/// Marks every pixel at or above `min_th`.
pub fn threshold_mask(img: &GrayImage, params: &ThresholdParams) -> BinaryMask {
    BinaryMask {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| v >= params.min_th).collect(),
    }
}

/// Fills masked pixels with the discrete harmonic interpolant of their
/// surroundings using Jacobi relaxation of the 4-neighbour Laplace equation.
///
/// Unmasked pixels are copied bit-for-bit. Masked pixels start from their own
/// value clamped into the unmasked range and are relaxed until the largest per-pixel update
/// drops below `tol` or `max_iters` sweeps have run. Missing neighbours at
/// the border are skipped (zero-flux boundary). Each update is an average of
/// values already inside the unmasked range, so results obey the discrete
/// maximum principle.
pub fn inpaint(img: &GrayImage, mask: &BinaryMask, max_iters: usize, tol: f64) -> Result<GrayImage> {
    if !img.same_dims(mask.width, mask.height) {
        return Err(ImagingError::DimensionMismatch(
            img.width,
            img.height,
            mask.width,
            mask.height,
        ));
    }
    let (w, h) = (img.width, img.height);
    let masked: Vec<usize> = (0..w * h).filter(|&i| mask.data[i]).collect();
    if masked.is_empty() {
        return Ok(img.clone());
    }
    if masked.len() == w * h {
        return Err(ImagingError::AllMasked);
    }

    let (lo, hi) = img
        .data
        .iter()
        .zip(&mask.data)
        .filter(|(_, &m)| !m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v), hi.max(v))
        });

    let mut current = img.data.clone();
    for &i in &masked {
        current[i] = current[i].clamp(lo, hi);
    }
    let mut next = current.clone();

    for _ in 0..max_iters {
        let mut max_update: f64 = 0.0;
        for &i in &masked {
            let (x, y) = (i % w, i / w);
            let mut acc = 0.0;
            let mut n = 0u32;
            if x > 0 {
                acc += current[i - 1];
                n += 1;
            }
            if x + 1 < w {
                acc += current[i + 1];
                n += 1;
            }
            if y > 0 {
                acc += current[i - w];
                n += 1;
            }
            if y + 1 < h {
                acc += current[i + w];
                n += 1;
            }
            let v = if n == 0 { current[i] } else { acc / f64::from(n) };
            max_update = max_update.max((v - current[i]).abs());
            next[i] = v;
        }
        std::mem::swap(&mut current, &mut next);
        if max_update < tol {
            break;
        }
    }

    Ok(GrayImage {
        width: w,
        height: h,
        data: current,
        bit_depth: img.bit_depth,
    })
}

/// Bilinear resize with corner-aligned sampling: output corners land exactly
/// on input corners. A 1-pixel output axis samples the input's centre line.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(ImagingError::ZeroDimension {
            width: out_w,
            height: out_h,
        });
    }
    if img.same_dims(out_w, out_h) {
        return Ok(img.clone());
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> f64 {
        if n_out == 1 {
            (n_in - 1) as f64 / 2.0
        } else {
            (i * (n_in - 1)) as f64 / (n_out - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let sy = coord(oy, img.height, out_h);
        let y0 = (sy.floor() as usize).min(img.height - 1);
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = coord(ox, img.width, out_w);
            let x0 = (sx.floor() as usize).min(img.width - 1);
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = sx - x0 as f64;
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, MAX_INTENSITY));
        }
    }
    Ok(GrayImage {
        width: out_w,
        height: out_h,
        data,
        bit_depth: img.bit_depth,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Histogram {
    pub bin_count: usize,
    pub counts: Vec<u64>,
    pub bin_edges: Vec<f64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Equal-width histogram over `[0, 255]`; the top edge belongs to the last bin.
pub fn histogram(img: &GrayImage, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(ImagingError::ZeroBins);
    }
    let width = MAX_INTENSITY / bins as f64;
    let bin_edges = (0..=bins).map(|i| i as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &v in &img.data {
        let b = ((v / MAX_INTENSITY * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram {
        bin_count: bins,
        counts,
        bin_edges,
    })
}
