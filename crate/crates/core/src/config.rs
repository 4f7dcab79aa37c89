//! Single-file run configuration shared by training, evaluation and checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelVariant, TaskKind};
use crate::trainer::TrainConfig;

/// Every setting of a run. Loaded from JSON; omitted keys take defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub variant: ModelVariant,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Lowercase tokens before vocabulary lookup.
    pub lowercase: bool,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate_config()?;
        if !(self.model.init_std.is_finite() && self.model.init_std > 0.0) {
            return Err(Error::Config("model.init_std must be positive".into()));
        }
        if self.model.head_dim == 0 {
            return Err(Error::Config("model.head_dim must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::from_json(r#"{"task": "ner", "train": {"epochs": 3, "learning_rate": 0.001}}"#);
        assert!(c.is_err(), "aliases are for the command line only");
        let c = RunConfig::from_json(r#"{"task": "token-classification", "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.task, TaskKind::TokenClassification);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.model.d_model, 128);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"trian": {}}"#).unwrap_err();
        assert_eq!(err.code(), "E_CONFIG");
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
