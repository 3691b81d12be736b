//! The run configuration: one JSON document covering model, training,
//! generation, and paths. Commands load it (or start from defaults), let
//! flags override individual values, and echo the merged result next to
//! whatever they produce.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use memcomputer_core::tasks::{CopyConfig, InductionConfig, QaConfig};
use memcomputer_core::training::TrainConfig;
use memcomputer_core::ModelConfig;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Echo a short symbol pattern after a delimiter.
    Copy,
    /// Colour-induction stories over named animals.
    Induction16,
    /// Single-supporting-fact person/location questions.
    Qa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub task: TaskKind,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    pub copy: CopyConfig,
    pub induction: InductionConfig,
    pub qa: QaConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Copy,
            n_train: 1000,
            n_val: 200,
            seed: 0,
            copy: CopyConfig::default(),
            induction: InductionConfig::default(),
            qa: QaConfig::default(),
        }
    }
}

/// The only section without defaults: where to read and write.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Training artifacts: config echo, metrics, checkpoints, traces.
    pub run_dir: Option<PathBuf>,
    /// Corpus directory holding train.jsonl, val.jsonl, vocab.json.
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            generator: GeneratorConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "config schema version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}
