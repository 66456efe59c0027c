use std::path::Path;

use super::{ModelError, Result};
use crate::dataset::{LabelScheme, Manifest};
use crate::imaging::{resize_bilinear, GrayImage, MAX_INTENSITY};

/// Converts a grayscale image to a network input: bilinear resize to
/// `height × width`, scale to `[0, 1]`, replicate over `channels`.
pub fn image_to_input(img: &GrayImage, input: [usize; 3]) -> Result<Vec<f64>> {
    let [c, h, w] = input;
    let resized;
    let img = if img.same_dims(w, h) {
        img
    } else {
        resized = resize_bilinear(img, w, h)?;
        &resized
    };
    let plane: Vec<f64> = img.data().iter().map(|v| v / MAX_INTENSITY).collect();
    Ok(plane.repeat(c))
}

/// Preprocessed inputs and labels held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub input: [usize; 3],
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn from_images(images: &[GrayImage], labels: Vec<usize>, input: [usize; 3]) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} images for {} labels",
                images.len(),
                labels.len()
            )));
        }
        let mut inputs = Vec::with_capacity(images.len() * input.iter().product::<usize>());
        for img in images {
            inputs.extend(image_to_input(img, input)?);
        }
        Ok(Self { input, inputs, labels })
    }

    /// Loads every record of `manifest`, resolving paths against `root`.
    pub fn from_manifest(manifest: &Manifest, scheme: LabelScheme, root: &Path, input: [usize; 3]) -> Result<Self> {
        let images = manifest
            .records
            .iter()
            .map(|r| GrayImage::load(r.resolve(root)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_images(&images, manifest.labels(scheme), input)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn select(&self, indices: &[usize]) -> Samples {
        let mut inputs = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            inputs.extend_from_slice(self.sample(i));
        }
        Samples {
            input: self.input,
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
