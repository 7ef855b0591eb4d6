//! Per-run manifest: command, resolved config, content hash of the inputs,
//! seeds, wall time, and the list of files the run produced. Re-running a
//! command with the same manifest inputs in sequential mode reproduces the
//! numeric outputs byte for byte.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub content_hash: String,
    pub seeds: serde_json::Value,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seeds: serde_json::Value,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &impl Serialize, seeds: serde_json::Value) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            seeds,
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Content hash over the resolved config and seeds (the full input state
    /// of the run); hex SHA-256.
    fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.command.as_bytes());
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        hasher.update(serde_json::to_vec(&self.seeds).expect("seeds serialize"));
        hex(&hasher.finalize())
    }

    pub fn write(self, dir: &Path) -> std::io::Result<()> {
        let manifest = RunManifest {
            content_hash: self.content_hash(),
            command: self.command,
            config: self.config,
            seeds: self.seeds,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            outputs: self
                .outputs
                .iter()
                .map(|p| {
                    p.strip_prefix(dir)
                        .unwrap_or(p)
                        .to_string_lossy()
                        .into_owned()
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), json)
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
