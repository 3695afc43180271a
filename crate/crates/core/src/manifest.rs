//! Run manifests: one JSON record per command invocation, written beside
//! the command's outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub started_unix: u64,
    pub wall_time_seconds: f64,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                config: BTreeMap::new(),
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                version: version_string(),
                started_unix,
                wall_time_seconds: 0.0,
            },
            clock: Instant::now(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.manifest.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn config_map(&mut self, kv: &BTreeMap<String, String>) -> &mut Self {
        self.manifest
            .config
            .extend(kv.iter().map(|(k, v)| (k.clone(), v.clone())));
        self
    }

    pub fn seed(&mut self, key: &str, value: u64) -> &mut Self {
        self.manifest.seeds.insert(key.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.display().to_string());
        self
    }

    pub fn finish(mut self, path: &Path) -> std::io::Result<RunManifest> {
        self.manifest.wall_time_seconds = self.clock.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest).map_err(std::io::Error::from)?;
        std::fs::write(path, text + "\n")?;
        Ok(self.manifest)
    }
}
