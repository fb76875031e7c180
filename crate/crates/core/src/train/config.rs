//! `key = value` run configuration files.
//!
//! Recognized keys: `beta`, `n_embed`, `n_layers`, `layer_size`, `lr`,
//! `batch_size`, `epochs`, `seed`. Blank lines and `#` comments are
//! ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const CONFIG_KEYS: [&str; 8] = [
    "beta",
    "n_embed",
    "n_layers",
    "layer_size",
    "lr",
    "batch_size",
    "epochs",
    "seed",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {key} = {value:?}")))
}

impl RunConfig {
    /// Overrides one field by its file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "beta" => self.model.beta = parse(key, value)?,
            "n_embed" => self.model.n_embed = parse(key, value)?,
            "n_layers" => self.model.n_layers = parse(key, value)?,
            "layer_size" => self.model.layer_size = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown key {key:?}; expected one of {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected `key = value`, got {raw:?}", n + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Renders the file form of this configuration.
    pub fn to_file_string(&self) -> String {
        format!(
            "beta = {}\nn_embed = {}\nn_layers = {}\nlayer_size = {}\nlr = {}\nbatch_size = {}\nepochs = {}\nseed = {}\n",
            self.model.beta,
            self.model.n_embed,
            self.model.n_layers,
            self.model.layer_size,
            self.train.lr,
            self.train.batch_size,
            self.train.epochs,
            self.train.seed
        )
    }
}
