use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Hex SHA-256 of the config's canonical JSON (object keys sorted).
pub fn config_hash(config: &Value) -> String {
    let canonical = serde_json::to_string(config).expect("JSON values always serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn build_id() -> String {
    let profile = if cfg!(debug_assertions) {
        "debug"
    } else {
        "release"
    };
    format!(
        "{} {} ({profile}, {}-{})",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub label: String,
    pub seed: u64,
    pub jitter: f64,
    pub step_size: f64,
    pub terminal_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    /// The fully resolved configuration; `train --config manifest.json`
    /// replays it.
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub build: String,
    pub threads: usize,
    pub wall_ms: u64,
    pub runs: Vec<RunEntry>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub checks: BTreeMap<String, bool>,
    #[serde(default)]
    pub summary: Value,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C) -> Self {
        let config = serde_json::to_value(config).expect("configs serialize to JSON");
        Self {
            command: command.to_owned(),
            config_hash: config_hash(&config),
            config,
            seeds: BTreeMap::new(),
            build: build_id(),
            threads: rayon::current_num_threads(),
            wall_ms: 0,
            runs: Vec::new(),
            outputs: Vec::new(),
            checks: BTreeMap::new(),
            summary: Value::Null,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{} is not a run manifest: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a = json!({"b": 1, "a": {"y": 2.5, "x": [1, 2]}});
        let b: Value = serde_json::from_str(r#"{"a": {"x": [1, 2], "y": 2.5}, "b": 1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        assert_ne!(config_hash(&a), config_hash(&json!({"b": 2})));
    }
}
