//! Run manifest: what was run, from which config, and what it produced.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rydpulse_core::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    /// Output files relative to the manifest's directory.
    pub outputs: Vec<String>,
    /// "complete", or a failure note when artifacts are partial.
    pub status: String,
}

pub fn config_hash(config_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    format!("{:x}", hasher.finalize())
}

fn now_unix_s() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, config_text: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: config_hash(config_text),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix_s: now_unix_s(),
            finished_unix_s: 0,
            outputs: Vec::new(),
            status: "incomplete".to_string(),
        }
    }

    pub fn record(&mut self, relative_path: &str) {
        if !self.outputs.iter().any(|o| o == relative_path) {
            self.outputs.push(relative_path.to_string());
        }
    }

    /// Atomic write (temp + rename); verifies every recorded output
    /// exists next to the manifest first.
    pub fn finish(mut self, dir: &Path, status: &str) -> Result<PathBuf> {
        self.finished_unix_s = now_unix_s();
        self.status = status.to_string();
        for out in &self.outputs {
            if !dir.join(out).exists() {
                return Err(Error::invalid(format!(
                    "manifest references missing output {out}"
                )));
            }
        }
        let path = dir.join(MANIFEST_NAME);
        let tmp = dir.join(format!("{MANIFEST_NAME}.tmp"));
        let text = serde_json::to_string_pretty(&self)
            .map_err(|e| Error::Parse(format!("manifest: {e}")))?;
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }
}
