use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::solver::SolverConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemState {
    Ok,
    Error,
}

/// Outcome for one unit of work in a multi-item command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemStatus {
    pub name: String,
    pub status: ItemState,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub message: Option<String>,
}

/// Machine-readable record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub operator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<SolverConfig>,
    pub metrics: serde_json::Map<String, serde_json::Value>,
    /// Wall-clock seconds per phase.
    pub timing: BTreeMap<String, f64>,
    pub artifacts: BTreeMap<String, String>,
    /// SHA-256 of every artifact, hex.
    pub checksums: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub items: Vec<ItemStatus>,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            inputs: BTreeMap::new(),
            operator: None,
            config: None,
            metrics: serde_json::Map::new(),
            timing: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            checksums: BTreeMap::new(),
            warnings: Vec::new(),
            items: Vec::new(),
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs
            .insert(key.to_string(), path.display().to_string());
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.metrics.insert(key.to_string(), v);
    }

    /// Records an artifact and its checksum; the file must already exist.
    pub fn artifact(&mut self, key: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.checksums.insert(key.to_string(), sha256_hex(&bytes));
        self.artifacts
            .insert(key.to_string(), path.display().to_string());
        Ok(())
    }

    pub fn failed_items(&self) -> usize {
        self.items
            .iter()
            .filter(|i| i.status == ItemState::Error)
            .count()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Elapsed seconds of a phase.
pub(crate) struct Stopwatch(std::time::Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch(std::time::Instant::now())
    }

    pub fn lap(&mut self) -> f64 {
        let s = self.0.elapsed().as_secs_f64();
        self.0 = std::time::Instant::now();
        s
    }
}
