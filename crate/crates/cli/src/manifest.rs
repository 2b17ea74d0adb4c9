//! Run manifests: written as `running` before work starts and rewritten as
//! `completed` or `failed` when it ends.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seaer_core::continual::StageLog;
use seaer_core::selection::BufferEntry;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub source: String,
    /// SHA-256 of `"blob <len>\0"` followed by the stream bytes.
    pub sha256: String,
    pub num_tasks: usize,
    pub num_vertices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRecord {
    pub stage: usize,
    pub vertices: Vec<usize>,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub seconds: Option<f64>,
    pub stages: Vec<StageLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: Status,
    pub error: Option<String>,
    /// Variant name used to group runs in reports.
    pub label: String,
    pub config: serde_json::Value,
    pub seeds: Vec<SeedRecord>,
    pub stream: StreamRecord,
    /// Artifact kind to file name, relative to the manifest's directory.
    pub artifacts: BTreeMap<String, String>,
    pub buffers: Vec<BufferEntry>,
    pub betas: Vec<BetaRecord>,
    pub timings: Timings,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn finish(&mut self, status: Status, error: Option<String>) {
        let now = unix_now();
        self.status = status;
        self.error = error;
        self.timings.finished_unix = Some(now);
        self.timings.seconds = Some(now - self.timings.started_unix);
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Git-style content hash: SHA-256 over `"blob <len>\0"` and the content.
pub fn blob_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
