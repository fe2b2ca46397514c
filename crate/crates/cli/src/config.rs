use std::fs;
use std::path::{Path, PathBuf};

use pmlm::finetune::FinetuneConfig;
use pmlm::masking::MaskingConfig;
use pmlm::model::ModelConfig;
use pmlm::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Environment variable that replaces `paths.out_dir`.
pub const OUT_DIR_ENV: &str = "PMLM_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Plain-text corpus, one document per line.
    pub corpus: Option<PathBuf>,
    /// Vocabulary file, one token per line. Built from the corpus when unset.
    pub vocab: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            vocab: None,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Everything a run needs, as one JSON document with the groups `model`,
/// `train`, `masking`, `finetune` and `paths`. Missing keys take their
/// defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub masking: MaskingConfig,
    pub finetune: FinetuneConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::input(format!("invalid config: {e}")))
    }

    /// Reads and validates a config file, then applies `PMLM_OUT`.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config =
            Self::from_json(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            config.paths.out_dir = PathBuf::from(dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.masking.validate()?;
        self.train_config().validate()?;
        self.finetune.validate()?;
        Ok(())
    }

    /// The training config with the masking group folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            masking: self.masking.clone(),
            ..self.train.clone()
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("config serializes");
        s.push('\n');
        s
    }

    /// First 8 hex digits of the SHA-256 of the canonical JSON, ignoring
    /// `paths.out_dir` so relocating outputs keeps run ids stable.
    pub fn hash8(&self) -> String {
        let mut value = self.to_value();
        value["paths"]["out_dir"] = serde_json::Value::String(String::new());
        hash8(value.to_string().as_bytes())
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_json_pretty()).map_err(|e| CliError::io(path, e))
    }
}

pub fn hash8(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..4].iter().map(|b| format!("{b:02x}")).collect()
}
