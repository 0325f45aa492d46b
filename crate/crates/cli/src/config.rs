//! Run configuration: one TOML file with `[model]`, `[train]`, `[synth]` and
//! `[paths]` tables, plus optional `[[references]]` cost entries. Every table
//! is optional; missing fields take their defaults.

use std::path::{Path, PathBuf};

use din_core::analysis::ReferenceCost;
use din_core::data_io::SyntheticTaskConfig;
use din_core::{ModelShape, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset manifest read by train/eval/predict/export and written by synth.
    pub manifest: PathBuf,
    /// Directory receiving training outputs.
    pub output_dir: PathBuf,
    /// Checkpoint read by eval/predict/export; defaults to `<output_dir>/best.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data/manifest.toml"),
            output_dir: PathBuf::from("runs/default"),
            checkpoint: None,
        }
    }
}

impl Paths {
    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.output_dir.join("best.ckpt"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelShape,
    pub train: TrainConfig,
    pub synth: SyntheticTaskConfig,
    pub paths: Paths,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<ReferenceCost>,
}

impl Default for RunConfig {
    /// Sized for the synthetic order task.
    fn default() -> Self {
        Self {
            model: ModelShape {
                input_dim: 16,
                reduced_dim: 16,
                segments: 8,
                widths: vec![2, 3],
                channels: 32,
                classes: 2,
            },
            train: TrainConfig::default(),
            synth: SyntheticTaskConfig::default(),
            paths: Paths::default(),
            references: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Read(PathBuf, std::io::Error),
    Parse(PathBuf, String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Read(p, e) => write!(f, "cannot read config {}: {e}", p.display()),
            ConfigError::Parse(p, e) => write!(f, "invalid config {}: {e}", p.display()),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }
}
