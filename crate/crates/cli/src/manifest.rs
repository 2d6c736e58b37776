use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Everything needed to rerun an artifact-producing command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub duration_secs: f64,
}

pub struct ManifestBuilder {
    started: Instant,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    config: serde_json::Value,
    seeds: Vec<u64>,
    outputs: Vec<String>,
}

impl ManifestBuilder {
    pub fn new(command: &'static str) -> Self {
        Self {
            started: Instant::now(),
            command,
            inputs: BTreeMap::new(),
            config: serde_json::Value::Null,
            seeds: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, name: impl Into<String>, path: &Path) -> &mut Self {
        self.inputs.insert(name.into(), path.display().to_string());
        self
    }

    pub fn config(&mut self, config: impl Serialize) -> &mut Self {
        self.config = serde_json::to_value(config).expect("config serializes");
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seeds.push(seed);
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Writes the manifest next to `primary` (`out.json` -> `out.manifest.json`).
    pub fn write_beside(&self, primary: &Path) -> Result<PathBuf> {
        let path = manifest_path(primary);
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            inputs: self.inputs.clone(),
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.outputs.clone(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let stem = primary
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    primary.with_file_name(format!("{stem}.manifest.json"))
}
