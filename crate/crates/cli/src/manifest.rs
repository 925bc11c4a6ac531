//! `manifest.json`: per-command config echo, seed, summary and artifact hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Replaces the entry for `command`, keeping entries written by other commands.
pub fn record(out: &Path, command: &str, config: Value, summary: Value, artifacts: &[&str]) -> Result<(), CliError> {
    let path = out.join(MANIFEST_FILE);
    let mut runs: BTreeMap<String, Value> = match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice::<Value>(&bytes)
            .ok()
            .and_then(|v| v.get("runs").cloned())
            .and_then(|r| serde_json::from_value(r).ok())
            .unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };
    let mut hashes = BTreeMap::new();
    for name in artifacts {
        hashes.insert(name.to_string(), sha256_file(&out.join(name))?);
    }
    runs.insert(
        command.to_string(),
        json!({ "config": config, "summary": summary, "artifacts": hashes }),
    );
    let text = serde_json::to_string_pretty(&json!({ "runs": runs })).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}
