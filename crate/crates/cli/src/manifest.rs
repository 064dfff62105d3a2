use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    /// SHA-256 of the config file, or of the arguments for commands without one.
    pub config_hash: String,
    pub seed: u64,
    pub toolkit_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(config_bytes: &[u8], seed: u64) -> Self {
        Self {
            command_line: std::env::args().collect(),
            config_hash: sha256_hex(config_bytes),
            seed,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn finish(mut self, path: &Path) -> anyhow::Result<()> {
        self.finished_unix = now();
        let json = serde_json::to_string_pretty(&self)?;
        taugru::io::write_atomic(path, format!("{json}\n").as_bytes())?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
