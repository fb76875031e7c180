use std::path::{Path, PathBuf};

use neural_velocimetry::train::{RunConfig, TrainConfig, TrainReport};
use serde::Serialize;

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command: inputs, resolved configuration,
/// seeds and per-pair training reports.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: Option<RunConfig>,
    pub rest_config: Option<TrainConfig>,
    pub seeds: Vec<u64>,
    pub normalize_coords: bool,
    pub reports: Vec<TrainReport>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, inputs: &[PathBuf]) -> Self {
        RunManifest {
            tool: "nvel".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            status: "ok".into(),
            inputs: inputs.to_vec(),
            outputs: Vec::new(),
            config: None,
            rest_config: None,
            seeds: Vec::new(),
            normalize_coords: false,
            reports: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn output(&mut self, path: PathBuf) -> PathBuf {
        self.outputs.push(path.clone());
        path
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| neural_velocimetry::Error::io(&path, e))?;
        Ok(path)
    }
}
