//! Run manifests: config hash, code version, input digests and emitted files.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::{hex_digest, HarnessConfig};
use crate::error::{HarnessError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Padding {
    pub k: usize,
    pub m: usize,
    pub padded_k: usize,
    pub padded_m: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub inputs: Vec<FileDigest>,
    /// Emitted files relative to the manifest directory; the manifest lists itself last.
    pub files: Vec<String>,
    pub padding: Option<Padding>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex_digest(&bytes),
    })
}

impl RunManifest {
    pub fn new(command: &str, cfg: &HarnessConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            seed: cfg.seed(),
            started_unix_ms: unix_ms(),
            finished_unix_ms: 0,
            inputs: Vec::new(),
            files: Vec::new(),
            padding: None,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    /// Stamps the finish time and writes `dir/manifest.json`.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix_ms = unix_ms();
        self.files.push(MANIFEST_NAME.to_string());
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&self).expect("manifest serialises");
        std::fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))
    }
}
