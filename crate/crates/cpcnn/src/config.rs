//! Flat key=value configuration: file parsing, typed access with defaults,
//! and override application for command-line flags.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::CpGraphParams;
use crate::model::{GraphFamily, ModelConfig};
use crate::train::TrainConfig;

/// Parsed key=value configuration. Later `set` calls replace earlier values,
/// which is how flag overrides win over file contents.
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: Vec<(String, String)>,
}

/// Every key the training pipeline understands.
pub const KNOWN_KEYS: &[&str] = &[
    "family",
    "n",
    "n_c",
    "p_cc",
    "p_cp",
    "p_pp",
    "ws_rewire",
    "stem_width",
    "widths",
    "num_classes",
    "image_size",
    "seed",
    "epochs",
    "batch_size",
    "base_lr",
    "warmup_epochs",
    "beta1",
    "beta2",
    "weight_decay",
    "augment",
    "data_seed",
    "train_subset",
    "eval_subset",
];

impl Config {
    pub fn new() -> Config {
        Config::default()
    }

    /// Parses `key=value` lines. Blank lines and lines starting with `#` are
    /// skipped; duplicate keys within one source are rejected.
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if cfg.get(key).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            cfg.entries.push((key.to_string(), value.to_string()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Sets or replaces one key.
    pub fn set(&mut self, key: &str, value: &str) {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some((_, v)) => *v = value.to_string(),
            None => self.entries.push((key.to_string(), value.to_string())),
        }
    }

    /// Applies `key=value` override strings in order.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::Config(format!("override {pair:?} is not key=value"))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("override {pair:?} has an empty key")));
            }
            self.set(key, value.trim());
        }
        Ok(())
    }

    /// Rejects keys outside the known set, catching typos before they are
    /// silently ignored.
    pub fn ensure_known_keys(&self) -> Result<()> {
        for (k, _) in &self.entries {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
        }
        Ok(())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!("key {key:?}: cannot parse {raw:?}"))
            }),
        }
    }

    pub fn get_u32(&self, key: &str, default: u32) -> Result<u32> {
        self.parsed(key, default)
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        self.parsed(key, default)
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        self.parsed(key, default)
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => {
                Err(Error::Config(format!("key {key:?}: expected true or false, got {other:?}")))
            }
        }
    }

    /// Serializes back to key=value lines, in insertion order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

/// Assembles a model configuration, falling back to defaults per key.
pub fn model_config_from(cfg: &Config) -> Result<ModelConfig> {
    let model = assemble_model(cfg)?;
    model.validate()?;
    Ok(model)
}

/// Assembles only the graph-sampling inputs, validating the graph parameters
/// but not the network shape, so graph-only commands accept configurations
/// whose widths were never meant to fit the node count.
pub fn graph_config_from(cfg: &Config) -> Result<ModelConfig> {
    let model = assemble_model(cfg)?;
    model.graph_params.validate()?;
    if !(0.0..=1.0).contains(&model.ws_rewire) {
        return Err(Error::Config(format!("ws_rewire {} outside [0,1]", model.ws_rewire)));
    }
    Ok(model)
}

fn assemble_model(cfg: &Config) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    let family = match cfg.get("family") {
        None => d.family,
        Some(raw) => GraphFamily::parse(raw)?,
    };
    let widths = match cfg.get("widths") {
        None => d.block_widths,
        Some(raw) => {
            let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
            if parts.len() != 4 {
                return Err(Error::Config(format!(
                    "key \"widths\": expected four comma-separated values, got {raw:?}"
                )));
            }
            let mut widths = [0u32; 4];
            for (slot, part) in widths.iter_mut().zip(&parts) {
                *slot = part.parse().map_err(|_| {
                    Error::Config(format!("key \"widths\": cannot parse {part:?}"))
                })?;
            }
            widths
        }
    };
    let model = ModelConfig {
        family,
        graph_params: CpGraphParams {
            n: cfg.get_u32("n", d.graph_params.n)?,
            n_c: cfg.get_u32("n_c", d.graph_params.n_c)?,
            p_cc: cfg.get_f64("p_cc", d.graph_params.p_cc)?,
            p_cp: cfg.get_f64("p_cp", d.graph_params.p_cp)?,
            p_pp: cfg.get_f64("p_pp", d.graph_params.p_pp)?,
        },
        ws_rewire: cfg.get_f64("ws_rewire", d.ws_rewire)?,
        stem_width: cfg.get_u32("stem_width", d.stem_width)?,
        block_widths: widths,
        num_classes: cfg.get_u32("num_classes", d.num_classes)?,
        image_size: cfg.get_u32("image_size", d.image_size)?,
        seed: cfg.get_u64("seed", d.seed)?,
    };
    Ok(model)
}

/// Assembles the full training configuration. `data_seed` defaults to the
/// model seed when not set separately.
pub fn train_config_from(cfg: &Config) -> Result<TrainConfig> {
    cfg.ensure_known_keys()?;
    let model = model_config_from(cfg)?;
    let d = TrainConfig::default();
    let train = TrainConfig {
        data_seed: cfg.get_u64("data_seed", model.seed)?,
        model,
        epochs: cfg.get_u32("epochs", d.epochs)?,
        batch_size: cfg.get_u32("batch_size", d.batch_size)?,
        base_lr: cfg.get_f64("base_lr", d.base_lr)?,
        warmup_epochs: cfg.get_u32("warmup_epochs", d.warmup_epochs)?,
        beta1: cfg.get_f64("beta1", d.beta1)?,
        beta2: cfg.get_f64("beta2", d.beta2)?,
        weight_decay: cfg.get_f64("weight_decay", d.weight_decay)?,
        augment: cfg.get_bool("augment", d.augment)?,
        train_subset: cfg.get_u32("train_subset", d.train_subset)?,
        eval_subset: cfg.get_u32("eval_subset", d.eval_subset)?,
    };
    train.validate()?;
    Ok(train)
}
