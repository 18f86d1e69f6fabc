use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of one CLI run; written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub catalog_hash: String,
    /// Schema, checkpoint and input hashes relevant to the run.
    pub hashes: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<PathBuf>,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_hash: String, catalog_hash: String) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            seed,
            config_hash,
            catalog_hash,
            hashes: BTreeMap::new(),
            started_unix: now_unix(),
            finished_unix: 0,
            outputs: Vec::new(),
        }
    }

    pub fn write(mut self, out: &Path) -> anyhow::Result<PathBuf> {
        self.finished_unix = now_unix();
        let path = out.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(path)
    }
}
