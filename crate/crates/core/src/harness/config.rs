use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{CodecConfig, LossConfig};
use crate::error::{Error, Result};
use crate::lm::LmConfig;
use crate::metrics::EvalConfig;
use crate::optim::AdamConfig;
use crate::rvq::QuantizerSettings;

/// Stem names and dataset locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub stems: Vec<String>,
    /// Manifest files; relative paths resolve against the working directory.
    pub train_manifest: PathBuf,
    pub validation_manifest: PathBuf,
    pub test_manifest: PathBuf,
    /// Track count and length of `make-toy-data`.
    pub toy_tracks: usize,
    pub toy_seconds: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            stems: crate::data::DEFAULT_STEMS.iter().map(|s| s.to_string()).collect(),
            train_manifest: PathBuf::from("data/train.txt"),
            validation_manifest: PathBuf::from("data/validation.txt"),
            test_manifest: PathBuf::from("data/test.txt"),
            toy_tracks: 60,
            toy_seconds: 12.0,
        }
    }
}

/// Quantizer shape, update rule and initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RvqConfig {
    pub depth: usize,
    pub codebook_size: usize,
    pub decay: f64,
    pub reinit_threshold: f64,
    pub beta: f64,
    pub kmeans_iters: usize,
    /// Training batches pooled for the one-off k-means initialization.
    pub kmeans_batches: usize,
}

impl Default for RvqConfig {
    fn default() -> Self {
        let q = QuantizerSettings::default();
        Self {
            depth: q.depth,
            codebook_size: q.codebook_size,
            decay: q.decay,
            reinit_threshold: q.reinit_threshold,
            beta: q.beta,
            kmeans_iters: 20,
            kmeans_batches: 1,
        }
    }
}

impl RvqConfig {
    pub fn settings(&self, dim: usize) -> QuantizerSettings {
        QuantizerSettings {
            depth: self.depth,
            codebook_size: self.codebook_size,
            dim,
            decay: self.decay,
            reinit_threshold: self.reinit_threshold,
            beta: self.beta,
        }
    }
}

/// Codec optimization loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_steps: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    /// Validation chunks scored at each checkpoint; 0 disables validation.
    pub validation_chunks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            batch_size: 16,
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            max_steps: 1000,
            checkpoint_every: 250,
            log_every: 10,
            seed: 0,
            grad_clip: 5.0,
            validation_chunks: 16,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    fn validate(&self, section: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config(format!("{section}.batch_size"), "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config(format!("{section}.learning_rate"), "must be positive"));
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return Err(Error::config(format!("{section}.checkpoint_every"), "checkpoint and log cadence must be positive"));
        }
        Ok(())
    }
}

/// Language-model optimization loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Length of each encoded training chunk.
    pub chunk_seconds: f64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            max_steps: 1000,
            checkpoint_every: 250,
            log_every: 10,
            chunk_seconds: 4.0,
        }
    }
}

/// Complete run configuration, one section per subsystem.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub data: DataConfig,
    pub codec: CodecConfig,
    pub rvq: RvqConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub lm: LmConfig,
    pub lm_train: LmTrainConfig,
    pub eval: EvalConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl Config {
    /// Parses TOML text, applies `section.key = value` overrides and validates.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        for (key, raw) in overrides {
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| Error::config(key, "empty override key"))?;
            let mut node = &mut table;
            for p in parts {
                node = node
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::config(key, format!("`{p}` is not a section")))?;
            }
            node.insert(leaf.to_string(), parse_value(raw));
        }
        let cfg: Config = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.loss.validate()?;
        self.lm.validate()?;
        self.eval.validate()?;
        self.train.validate("train")?;
        if self.lm_train.batch_size == 0 {
            return Err(Error::config("lm_train.batch_size", "must be at least 1"));
        }
        if self.lm_train.checkpoint_every == 0 || self.lm_train.log_every == 0 {
            return Err(Error::config("lm_train.checkpoint_every", "checkpoint and log cadence must be positive"));
        }
        if self.data.stems.len() != self.codec.n_sources {
            return Err(Error::config(
                "data.stems",
                format!("{} stem names for {} sources", self.data.stems.len(), self.codec.n_sources),
            ));
        }
        if self.rvq.depth == 0 || self.rvq.codebook_size == 0 || self.rvq.codebook_size > 1 << 16 {
            return Err(Error::config("rvq.codebook_size", "depth and codebook size must be in 1..=65536"));
        }
        if !(self.rvq.decay > 0.0 && self.rvq.decay < 1.0) {
            return Err(Error::config("rvq.decay", "must lie in (0, 1)"));
        }
        let f = self.codec.fold();
        for (name, secs) in [("eval.chunk_seconds", self.eval.chunk_seconds), ("lm_train.chunk_seconds", self.lm_train.chunk_seconds)] {
            let n = secs * self.codec.sample_rate as f64;
            if (n - n.round()).abs() > 1e-9 || n.round() as usize % f != 0 || n < 1.0 {
                return Err(Error::config(
                    name,
                    format!("{secs} s is not a whole multiple of the fold reduction {f} at {} Hz", self.codec.sample_rate),
                ));
            }
        }
        let max = self.loss.max_scale();
        if self.codec.context_samples() < max {
            return Err(Error::config(
                "codec.context_seconds",
                format!("context of {} samples is shorter than the largest spectral scale {max}", self.codec.context_samples()),
            ));
        }
        Ok(())
    }
}
