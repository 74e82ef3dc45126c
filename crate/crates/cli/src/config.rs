use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use scam_core::data::SynthConfig;
use scam_core::dsp::SpectrogramConfig;
use scam_core::model::ModelConfig;
use scam_core::trainkit::TrainConfig;
use serde::{Deserialize, Serialize};

pub const SEED_VAR: &str = "SCAM_SEED";

/// Everything a run needs, one TOML section per module.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub spectrogram: SpectrogramConfig,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key.path=value`
    /// overrides, then the seed environment variable, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| anyhow!("config {}: {}", p.display(), e.message()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let message = e.into_inner().message().to_string();
            if path == "." {
                anyhow!("invalid config: {message}")
            } else {
                anyhow!("invalid config: {path}: {message}")
            }
        })?;
        if let Some(raw) = env_seed {
            let seed: u64 = raw.trim().parse().map_err(|_| anyhow!("{SEED_VAR}: expected an unsigned integer, got {raw:?}"))?;
            cfg.synth.seed = seed;
            cfg.model.seed = seed;
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate().map_err(|e| anyhow!("invalid config: synth: {e}"))?;
        self.model.validate().map_err(|e| anyhow!("invalid config: model: {e}"))?;
        self.train.validate().map_err(|e| anyhow!("invalid config: train: {e}"))?;
        self.spectrogram.validate().map_err(|e| anyhow!("invalid config: spectrogram: {e}"))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// `train.epochs=5` style override. The value is read as a TOML value and
/// falls back to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override {spec:?}: expected key.path=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override {spec:?}: empty key segment");
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for (depth, part) in parents.iter().enumerate() {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override {spec:?}: {} is not a table", path[..=depth].join(".")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
