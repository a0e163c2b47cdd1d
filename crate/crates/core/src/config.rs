//! Resolved run configuration: built-in defaults, overridden by a TOML file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{TargetFrame, TEST_SUBJECTS, TRAIN_SUBJECTS};
use crate::error::{Error, Result};
use crate::model::NetworkConfig;
use crate::optim::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed: network init, shuffling, synthesis and noise.
    pub seed: u64,
    pub dataset: PathBuf,
    pub cameras: PathBuf,
    pub output_dir: PathBuf,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    /// Restrict training and evaluation to these actions (empty = all).
    pub actions: Vec<String>,
    pub target_frame: TargetFrame,
    /// Write a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
    pub include_root: bool,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dataset: "data/poses.jsonl".into(),
            cameras: "data/cameras.toml".into(),
            output_dir: "runs".into(),
            train_subjects: TRAIN_SUBJECTS.map(String::from).to_vec(),
            test_subjects: TEST_SUBJECTS.map(String::from).to_vec(),
            actions: Vec::new(),
            target_frame: TargetFrame::Camera,
            checkpoint_every: 0,
            include_root: false,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(origin, line, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    /// Propagates the master seed and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.network.validate()?;
        self.train.validate()?;
        if self.train_subjects.iter().any(|s| self.test_subjects.contains(s)) {
            return Err(Error::Argument("train and test subjects overlap".into()));
        }
        Ok(self)
    }
}
