use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
    /// False for files holding wall-clock measurements.
    pub reproducible: bool,
}

/// What a command read, which seeds it used and what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Digest over the input documents and the resolved settings.
    pub config_digest: String,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<OutputEntry>,
    pub versions: BTreeMap<String, String>,
}

/// Collects outputs of one command into `dir`.
pub struct OutputDir {
    dir: PathBuf,
    outputs: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.write_with(name, bytes, true)
    }

    pub fn write_timing(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.write_with(name, bytes, false)
    }

    fn write_with(&mut self, name: &str, bytes: &[u8], reproducible: bool) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(OutputEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            reproducible,
        });
        Ok(())
    }

    pub fn finish(
        mut self,
        command: &str,
        config_digest: String,
        seeds: BTreeMap<String, u64>,
    ) -> Result<ExperimentManifest, CliError> {
        let manifest = ExperimentManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_digest,
            seeds,
            outputs: std::mem::take(&mut self.outputs),
            versions: BTreeMap::from([
                ("phmcts".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                ("manifest".to_string(), "1".to_string()),
            ]),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Digest of named input blobs, order-sensitive.
pub fn digest_inputs(parts: &[(&str, &[u8])]) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in parts {
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}
