//! Reproducibility record written next to the outputs of every command that
//! creates files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    /// sha256 of each input file's contents, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub struct ManifestBuilder {
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn start(config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            manifest: RunManifest {
                command: std::env::args().collect(),
                config,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                seed,
                tool_version: env!("CARGO_PKG_VERSION"),
                started_at: unix_now(),
                finished_at: 0,
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let digest = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Digests the outputs and writes the manifest to `path`.
    pub fn finish(mut self, outputs: &[PathBuf], path: &Path) -> anyhow::Result<()> {
        for out in outputs {
            let digest = sha256_file(out)?;
            self.manifest.outputs.insert(out.display().to_string(), digest);
        }
        self.manifest.finished_at = unix_now();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// `<out>.manifest.json` beside a single output file.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}
