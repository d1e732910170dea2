//! Experiment manifest: the declarative document `crackbench run` executes.
//!
//! ```json
//! {
//!   "dataset_root": "corpus",
//!   "split_manifest": "split.json",
//!   "output_dir": "results",
//!   "weight_store": "weights",
//!   "backbones": ["EfficientNetV2"],
//!   "modes": ["fine_tune_all"],
//!   "n_runs": 2,
//!   "train_config": { "epochs": 5, "batch_size": 16, "seed": 1 },
//!   "frozen_head_training": true,
//!   "save_models": false
//! }
//! ```
//!
//! `train_config` fields not given fall back to the documented defaults;
//! relative paths resolve against the working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crackbench_core::model::{BackboneName, TrainMode};
use crackbench_core::training::TrainConfig;
use crackbench_core::Error;

fn default_true() -> bool {
    true
}

fn default_patch_size() -> usize {
    227
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub dataset_root: PathBuf,
    pub split_manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub weight_store: Option<PathBuf>,
    pub backbones: Vec<String>,
    pub modes: Vec<String>,
    pub n_runs: usize,
    #[serde(default)]
    pub train_config: TrainConfig,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    /// When false, frozen_features cells evaluate the seed-initialized head
    /// without training it (the literal zero-training regime).
    #[serde(default = "default_true")]
    pub frozen_head_training: bool,
    #[serde(default)]
    pub save_models: bool,
}

impl ExperimentManifest {
    pub fn read(path: &Path) -> Result<ExperimentManifest, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn parsed_backbones(&self) -> Result<Vec<BackboneName>, Error> {
        self.backbones.iter().map(|s| BackboneName::parse(s)).collect()
    }

    pub fn parsed_modes(&self) -> Result<Vec<TrainMode>, Error> {
        self.modes.iter().map(|s| TrainMode::parse(s)).collect()
    }
}
