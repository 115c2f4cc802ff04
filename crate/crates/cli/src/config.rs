//! Run configuration file (TOML). Every section is optional; command-line
//! flags override whatever the file sets.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use asrf::refine::RefineConfig;
use asrf::synth::SynthConfig;
use asrf::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset directory (mapping.txt, features/, labels/, splits/).
    pub data: Option<PathBuf>,
    /// Output directory for checkpoints, logs and reports.
    pub out: Option<PathBuf>,
    /// Model checkpoint to evaluate.
    pub model: Option<PathBuf>,
    /// Override for the dataset's splits/train.txt.
    pub train_split: Option<PathBuf>,
    /// Override for the dataset's splits/test.txt.
    pub test_split: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub refine: RefineConfig,
}

impl RunConfig {
    /// Reads a config file; paths inside it are resolved against the file's
    /// directory and must exist (the output directory excepted).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.data,
            &mut p.out,
            &mut p.model,
            &mut p.train_split,
            &mut p.test_split,
        ] {
            if let Some(rel) = slot.as_mut() {
                if rel.is_relative() {
                    *rel = base.join(&*rel);
                }
            }
        }
        for (name, slot) in [
            ("data", &p.data),
            ("model", &p.model),
            ("train_split", &p.train_split),
            ("test_split", &p.test_split),
        ] {
            if let Some(path) = slot {
                if !path.exists() {
                    bail!("config paths.{name} = {} does not exist", path.display());
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Copy with every path made absolute, so a saved config can be reused
    /// from any working directory.
    pub fn absolutized(&self) -> Result<Self> {
        let mut cfg = self.clone();
        let p = &mut cfg.paths;
        for slot in [
            &mut p.data,
            &mut p.out,
            &mut p.model,
            &mut p.train_split,
            &mut p.test_split,
        ] {
            if let Some(path) = slot.as_mut() {
                *path = std::path::absolute(&*path)
                    .with_context(|| format!("resolving {}", path.display()))?;
            }
        }
        Ok(cfg)
    }
}
