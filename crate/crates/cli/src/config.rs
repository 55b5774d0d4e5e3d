use std::path::{Path, PathBuf};

use ggt_vae::graph::SplitConfig;
use ggt_vae::model::ModelConfig;
use ggt_vae::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

/// One experiment: data, model, optimization, split protocol and seeds.
/// Relative paths resolve against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_cache_dir: Option<PathBuf>,
}

/// The parts of a config that determine a single run, as stored in
/// `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.nodes);
        resolve(&mut cfg.edges);
        if let Some(p) = cfg.out_dir.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.pe_cache_dir.as_mut() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for p in [&self.nodes, &self.edges] {
            if !p.is_file() {
                return Err(CliError::input(format!("data file not found: {}", p.display())));
            }
        }
        if self.seeds.is_empty() {
            return Err(CliError::input("seeds must not be empty"));
        }
        let mut uniq = self.seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != self.seeds.len() {
            log::warn!("seed list contains duplicates; their runs will be identical");
        }
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        Ok(())
    }

    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            model: self.model,
            train: TrainConfig { seed, ..self.train },
            split: self.split,
        }
    }
}
