//! Run configuration: one JSON document with every knob of a scenario run,
//! plus the scenario code that names it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cxr_core::denoise::TVParams;
use cxr_core::imaging::{ThresholdParams, DEFAULT_INPAINT_MAX_ITERS, DEFAULT_INPAINT_TOL};
use cxr_core::imbalance::{AugmentSpec, OversampleTarget};
use cxr_core::model::{HeadPool, NetworkSpec, TrainConfig, BASELINE_HIDDEN, BASELINE_WIDTHS};
use cxr_core::LabelScheme;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result, OUTPUT_ROOT_ENV};

/// How class imbalance is countered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Imbalance {
    /// Inverse-frequency class weights inside the loss (`C` scenarios).
    #[default]
    WeightedLoss,
    /// Augmented copies until the class targets are met (`R` scenarios).
    Oversample,
}

impl Imbalance {
    pub fn code(self) -> &'static str {
        match self {
            Imbalance::WeightedLoss => "C",
            Imbalance::Oversample => "R",
        }
    }
}

/// Imbalance strategy crossed with label scheme, written `CB`, `CM3`,
/// `CM4`, `RB`, `RM3` or `RM4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scenario {
    pub imbalance: Imbalance,
    pub scheme: LabelScheme,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.imbalance.code(), self.scheme.code())
    }
}

impl FromStr for Scenario {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            CliError::Config(format!(
                "unknown scenario {s:?}; expected one of CB, CM3, CM4, RB, RM3, RM4"
            ))
        };
        let upper = s.trim().to_ascii_uppercase();
        let (head, rest) = upper.split_at_checked(1).ok_or_else(bad)?;
        let imbalance = match head {
            "C" => Imbalance::WeightedLoss,
            "R" => Imbalance::Oversample,
            _ => return Err(bad()),
        };
        let scheme = match rest {
            "B" => LabelScheme::Binary,
            "M3" => LabelScheme::Multi3,
            "M4" => LabelScheme::Multi4,
            _ => return Err(bad()),
        };
        Ok(Self { imbalance, scheme })
    }
}

/// Mask, inpaint, resize and denoise settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Artifact mask thresholds; there is no default, they must be given.
    pub threshold: Option<ThresholdParams>,
    pub inpaint_max_iters: usize,
    pub inpaint_tol: f64,
    /// Side length of the square resized image.
    pub size: usize,
    pub tv: TVParams,
    pub histogram_bins: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            threshold: None,
            inpaint_max_iters: DEFAULT_INPAINT_MAX_ITERS,
            inpaint_tol: DEFAULT_INPAINT_TOL,
            size: 331,
            tv: TVParams::default(),
            histogram_bins: 256,
        }
    }
}

impl PreprocessConfig {
    /// The mask thresholds, or a configuration error when unset.
    pub fn threshold(&self) -> Result<ThresholdParams> {
        self.threshold
            .ok_or_else(|| CliError::Config("artifact thresholds min_th and max_th are required".into()))
    }

    /// Checks every set field; an unset threshold is only an error when
    /// preprocessing actually runs.
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = &self.threshold {
            t.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.tv.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.size == 0 || self.histogram_bins == 0 || self.inpaint_max_iters == 0 {
            return Err(CliError::Config(
                "size, histogram_bins and inpaint_max_iters must be positive".into(),
            ));
        }
        if !(self.inpaint_tol > 0.0) {
            return Err(CliError::Config("inpaint_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Architecture of the classifier; the class count comes from the scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Side length of the square network input.
    pub input_size: usize,
    pub block_widths: Vec<usize>,
    pub hidden: usize,
    pub head_pool: HeadPool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: 331,
            block_widths: BASELINE_WIDTHS.to_vec(),
            hidden: BASELINE_HIDDEN,
            head_pool: HeadPool::default(),
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self, num_classes: usize) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            input: [3, self.input_size, self.input_size],
            block_widths: self.block_widths.clone(),
            hidden: self.hidden,
            num_classes,
            head_pool: self.head_pool,
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    /// Root for relative manifest paths; defaults to the manifest's directory.
    pub image_root: Option<PathBuf>,
    /// Parent of run directories; defaults to `$CXR_OUTPUT_ROOT`, then `runs`.
    pub output_dir: Option<PathBuf>,
}

/// Everything that determines a scenario run. `seed` is the master seed:
/// resolving copies it into the training and augmentation seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Label of the model configuration in comparison tables.
    pub name: String,
    pub scheme: LabelScheme,
    pub imbalance: Imbalance,
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentSpec,
    pub oversample_target: OversampleTarget,
    /// Per-class constants of the class weights; all ones when absent.
    pub class_constants: Option<Vec<f64>>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "baseline".into(),
            scheme: LabelScheme::Binary,
            imbalance: Imbalance::default(),
            seed: 0,
            preprocess: PreprocessConfig::default(),
            augment: AugmentSpec::default(),
            oversample_target: OversampleTarget::Max,
            class_constants: None,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            imbalance: self.imbalance,
            scheme: self.scheme,
        }
    }

    pub fn set_scenario(&mut self, scenario: Scenario) {
        self.imbalance = scenario.imbalance;
        self.scheme = scenario.scheme;
    }

    /// Fills defaults that depend on the environment, propagates the master
    /// seed and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.augment.seed = self.seed;
        let manifest = self
            .paths
            .manifest
            .clone()
            .ok_or_else(|| CliError::Config("no manifest path given".into()))?;
        if self.paths.image_root.is_none() {
            let parent = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
            self.paths.image_root = Some(parent);
        }
        if self.paths.output_dir.is_none() {
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            self.paths.output_dir = Some(root);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: &dyn fmt::Display| CliError::Config(e.to_string());
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("invalid run name {:?}", self.name)));
        }
        self.preprocess.validate()?;
        self.augment.validate().map_err(|e| config(&e))?;
        self.train.validate().map_err(|e| config(&e))?;
        let classes = self.scheme.num_classes();
        self.network.spec(classes)?;
        if let Some(c) = &self.class_constants {
            if c.len() != classes || c.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(CliError::Config(format!(
                    "class_constants needs {classes} positive values, got {c:?}"
                )));
            }
        }
        if let OversampleTarget::PerClass(t) = &self.oversample_target {
            if t.len() != classes {
                return Err(CliError::Config(format!(
                    "oversample target lists {} classes, scheme has {classes}",
                    t.len()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_codes_round_trip() {
        for code in ["CB", "CM3", "CM4", "RB", "RM3", "RM4"] {
            let s: Scenario = code.parse().unwrap();
            assert_eq!(s.to_string(), code);
        }
        let s: Scenario = "rm4".parse().unwrap();
        assert_eq!((s.imbalance, s.scheme), (Imbalance::Oversample, LabelScheme::Multi4));
        for bad in ["", "X", "CB2", "RM5", "M3"] {
            assert!(bad.parse::<Scenario>().is_err(), "{bad}");
        }
    }

    #[test]
    fn defaults_serialise_and_resolve() {
        let cfg = RunConfig {
            paths: Paths {
                manifest: Some("data/manifest.csv".into()),
                output_dir: Some("out".into()),
                ..Default::default()
            },
            seed: 9,
            ..Default::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.train.seed, 9);
        assert_eq!(resolved.augment.seed, 9);
        assert_eq!(resolved.paths.image_root, Some(PathBuf::from("data")));
        assert_eq!(resolved.scenario().to_string(), "CB");
    }

    #[test]
    fn partial_json_takes_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"scheme": "Multi3", "train": {"max_epochs": 3}}"#).unwrap();
        assert_eq!(cfg.scheme, LabelScheme::Multi3);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.batch_size, 10);
        assert_eq!(cfg.network.input_size, 331);
    }

    #[test]
    fn invalid_sections_are_config_errors() {
        let base = RunConfig {
            paths: Paths {
                manifest: Some("m.csv".into()),
                ..Default::default()
            },
            ..Default::default()
        };
        let mut bad = base.clone();
        bad.class_constants = Some(vec![1.0]);
        assert!(matches!(bad.resolve(), Err(CliError::Config(_))));
        let mut bad = base.clone();
        bad.train.batch_size = 0;
        assert!(matches!(bad.resolve(), Err(CliError::Config(_))));
        let mut bad = base.clone();
        bad.network.input_size = 16;
        assert!(matches!(bad.resolve(), Err(CliError::Config(_))));
        let mut bad = base;
        bad.paths.manifest = None;
        assert!(matches!(bad.resolve(), Err(CliError::Config(_))));
    }
}
