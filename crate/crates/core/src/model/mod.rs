//! Baseline concatenation-residual CNN with hand-written reverse-mode
//! gradients, Adam, early stopping, layer freezing and checkpoints.
//!
//! Everything runs in double precision on one sample at a time; batch
//! gradients are the mean of per-sample gradients since no layer couples
//! samples.

pub mod checkpoint;
pub mod data;
pub mod layers;
pub mod network;
pub mod optim;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use data::{image_to_input, Samples};
pub use network::{
    BlockShape, ForwardCache, Gradients, HeadPool, Network, NetworkSpec, Param, Tap, BASELINE_HIDDEN, BASELINE_WIDTHS,
};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::Tensor;
pub use train::{
    kfold_train, predict, train, EarlyStopping, FoldSummary, KFoldResult, MetricRow, MetricTrace, StopDecision,
    TrainConfig, TrainedModel,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown layer selector {0:?}")]
    UnknownLayer(String),
    #[error("empty {0} set")]
    EmptyManifest(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Imbalance(#[from] crate::imbalance::ImbalanceError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
