//! Pipeline driver behind the `cxr` executable.
//!
//! Every subcommand is a plain function here so that tests and other tools
//! can run the pipeline without spawning a process:
//!
//! - [`preprocess::cmd_preprocess`]: mask, inpaint, resize and denoise images.
//! - [`scenario::cmd_run_scenario`]: apply an imbalance strategy, train,
//!   evaluate and write a self-describing run directory.
//! - [`report::cmd_report`]: compare finished runs side by side.
//!
//! [`commands`] holds the argument definitions and dispatch.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod hash;
pub mod preprocess;
pub mod report;
pub mod scenario;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{Imbalance, NetworkConfig, Paths, PreprocessConfig, RunConfig, Scenario};
pub use preprocess::{cmd_preprocess, PreprocessOutcome};
pub use report::{cmd_report, ComparisonTable, ReportRow};
pub use scenario::{cmd_run_scenario, RunOutcome, RunSummary};

/// Environment variable naming the default root for run directories.
pub const OUTPUT_ROOT_ENV: &str = "CXR_OUTPUT_ROOT";

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const PARTIAL_FAILURE: u8 = 1;
    pub const CONFIG_ERROR: u8 = 2;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no completed run in {}: {reason}", path.display())]
    MissingRun { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Dataset(#[from] cxr_core::dataset::DatasetError),
    #[error(transparent)]
    Imaging(#[from] cxr_core::imaging::ImagingError),
    #[error(transparent)]
    Denoise(#[from] cxr_core::denoise::DenoiseError),
    #[error(transparent)]
    Imbalance(#[from] cxr_core::imbalance::ImbalanceError),
    #[error(transparent)]
    Model(#[from] cxr_core::model::ModelError),
    #[error(transparent)]
    Checkpoint(#[from] cxr_core::model::CheckpointError),
    #[error(transparent)]
    Explain(#[from] cxr_core::explain::ExplainError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG_ERROR,
            _ => exit::PARTIAL_FAILURE,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Json { path, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Writes `contents` to `path`, creating parent directories.
pub(crate) fn write_file(path: &std::path::Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    std::fs::write(path, contents).map_err(CliError::io(path))
}

/// Pretty JSON file.
pub(crate) fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(CliError::json(path))?;
    write_file(path, json + "\n")
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(CliError::json(path))
}
