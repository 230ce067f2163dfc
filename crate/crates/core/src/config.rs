//! Run configuration and stage selection.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::{default_splits, ComposerConfig, SplitFraction};
use crate::pipeline::DetectorParams;
use crate::wordprep::PrepConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown stage `{0}` (expected builtin, template, oracle or adapter:<command>)")]
    UnknownStage(String),
    #[error("adapter selection has an empty command")]
    EmptyAdapterCommand,
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which implementation backs a stage.
///
/// Textual forms: `builtin`, `template` (recognizer alias of `builtin`),
/// `oracle`, and `adapter:<command line>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StageSelection {
    Builtin,
    Oracle,
    Adapter(String),
}

impl FromStr for StageSelection {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(cmd) = s.strip_prefix("adapter:") {
            let cmd = cmd.trim();
            if cmd.is_empty() {
                return Err(ConfigError::EmptyAdapterCommand);
            }
            return Ok(Self::Adapter(cmd.to_string()));
        }
        match s {
            "builtin" | "template" => Ok(Self::Builtin),
            "oracle" => Ok(Self::Oracle),
            other => Err(ConfigError::UnknownStage(other.to_string())),
        }
    }
}

impl TryFrom<String> for StageSelection {
    type Error = ConfigError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<StageSelection> for String {
    fn from(s: StageSelection) -> String {
        s.to_string()
    }
}

impl fmt::Display for StageSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Builtin => f.write_str("builtin"),
            Self::Oracle => f.write_str("oracle"),
            Self::Adapter(cmd) => write!(f, "adapter:{cmd}"),
        }
    }
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 0.75, 0.9];

/// Everything a compose or eval run can be configured with. Missing fields
/// take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub composer: ComposerConfig,
    pub prep: PrepConfig,
    pub detector_params: DetectorParams,
    pub detector: StageSelection,
    pub recognizers: Vec<StageSelection>,
    pub thresholds: Vec<f64>,
    pub splits: Vec<SplitFraction>,
    pub seed: u64,
    pub pad: u32,
    /// Worker threads; 0 means one per available core.
    pub jobs: usize,
    /// Word pool whose renders serve as template-matching references.
    pub atlas: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            composer: ComposerConfig::default(),
            prep: PrepConfig::default(),
            detector_params: DetectorParams::default(),
            detector: StageSelection::Builtin,
            recognizers: vec![StageSelection::Builtin],
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            splits: default_splits(),
            seed: 0,
            pad: crate::pipeline::DEFAULT_PAD,
            jobs: 0,
            atlas: None,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let read_err = |message: String| ConfigError::Read { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.composer.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.prep.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        crate::metrics::check_thresholds(&self.thresholds).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        crate::composer::split_counts(1, &self.splits).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// `jobs`, resolving 0 to the number of available cores.
    pub fn worker_count(&self) -> usize {
        resolve_jobs(self.jobs)
    }
}

pub fn resolve_jobs(jobs: usize) -> usize {
    if jobs > 0 {
        jobs
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}
