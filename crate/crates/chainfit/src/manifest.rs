//! Provenance record written next to every run's outputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    /// Input path → SHA-256 of its contents (directories are hashed file by file).
    pub inputs: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>, threads: usize, config: serde_json::Value) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            config,
            inputs: BTreeMap::new(),
            wall_clock_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut entries: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            for p in entries {
                self.inputs.insert(p.display().to_string(), sha256_file(&p)?);
            }
        } else {
            self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
