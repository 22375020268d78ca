//! Machine-readable run manifests: enough to reconstruct the exact command
//! that produced any output artifact.
//!
//! Manifests carry timing metadata and are the one output excluded from
//! byte-level reproducibility comparisons.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub started_at: String,
    pub duration_ms: u128,
}

pub struct ManifestBuilder {
    command: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    seed: Option<u64>,
    threads: usize,
    started_at: chrono::DateTime<chrono::Utc>,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: Option<u64>, threads: usize) -> Self {
        Self {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seed,
            threads,
            started_at: chrono::Utc::now(),
            clock: Instant::now(),
        }
    }

    pub fn input(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.inputs.insert(key.to_string(), value.to_string());
        self
    }

    pub fn output(&mut self, path: impl ToString) -> &mut Self {
        self.outputs.push(path.to_string());
        self
    }

    /// Write `<command>_run_manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let manifest = RunManifest {
            tool: "panodent",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            seed: self.seed,
            threads: self.threads,
            started_at: self.started_at.to_rfc3339(),
            duration_ms: self.clock.elapsed().as_millis(),
        };
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(format!("{}_run_manifest.json", self.command));
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }
}
