//! Toolkit for classifying small, class-imbalanced grayscale radiograph sets.
//!
//! The crate is organised along the pipeline:
//!
//! - [`imaging`]: grayscale rasters, artifact masks, harmonic inpainting,
//!   resizing, histograms and PNG/PGM I/O.
//! - [`denoise`]: adaptive total-variation denoising with a log-fidelity term.
//! - [`dataset`]: CSV manifests, label schemes, stratified splits and folds.
//! - [`imbalance`]: inverse-frequency class weights and random oversampling by
//!   geometric augmentation.
//! - [`model`]: a small concatenation-residual CNN with hand-written reverse
//!   mode gradients, Adam, early stopping, freezing and checkpoints.
//! - [`metrics`]: softmax, weighted cross-entropy, confusion matrices and
//!   one-vs-rest metrics including ROC-AUC.
//! - [`explain`]: Grad-CAM heatmaps, grid-superpixel LIME and overlays.
//! - [`synthetic`]: generators for the synthetic stand-in datasets.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod denoise;
pub mod explain;
pub mod imaging;
pub mod imbalance;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synthetic;

pub use dataset::{Finding, LabelScheme, Manifest, SampleRecord, Source, Split};
pub use imaging::{BinaryMask, GrayImage, Histogram, ThresholdParams};
pub use metrics::{ConfusionMatrix, EvalReport};
