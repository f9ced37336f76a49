//! Provenance manifest written next to the outputs as `_RUNINFO.json`.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_NAME: &str = "_RUNINFO.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub git_commit: Option<String>,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub synthetic_inputs: bool,
    pub inputs: Vec<FileHash>,
    pub stages: Vec<StageTime>,
    /// Sorted by path.
    pub outputs: Vec<FileHash>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, self.to_json()).map_err(|e| CliError::io(path, e))
    }
}

pub fn hash_file(path: &Path, label: String) -> Result<FileHash, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileHash { path: label, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
}
