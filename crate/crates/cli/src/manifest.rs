//! Run manifests: every subcommand records what it did, atomically, so runs
//! can be reproduced from the manifest alone.

use serde::Serialize;
use std::path::Path;
use std::time::Instant;

#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub wall_seconds: f64,
}

pub struct ManifestWriter {
    started: Instant,
    subcommand: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl ManifestWriter {
    pub fn new(subcommand: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            started: Instant::now(),
            subcommand: subcommand.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// Write `manifest.json` under `dir` via a temp file + rename.
    pub fn finish(self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = RunManifest {
            subcommand: self.subcommand,
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        let tmp = dir.join(".manifest.json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&manifest)?)?;
        std::fs::rename(&tmp, dir.join("manifest.json"))?;
        Ok(())
    }
}
