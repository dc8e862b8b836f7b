use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// What produced an artifact: written as `<artifact>.manifest.json`, or
/// `manifest.json` inside an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, serde_json::Value>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub duration_secs: f64,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    if artifact.is_dir() {
        artifact.join("manifest.json")
    } else {
        let mut s = artifact.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Writes one manifest next to each output.
    pub fn finish(self, config: BTreeMap<String, serde_json::Value>, seed: Option<u64>) -> anyhow::Result<RunManifest> {
        let show = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>();
        let manifest = RunManifest {
            command: self.command,
            config,
            seed,
            inputs: show(&self.inputs),
            outputs: show(&self.outputs),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        for out in &self.outputs {
            let path = manifest_path(out);
            std::fs::write(&path, &json).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        }
        Ok(manifest)
    }
}
