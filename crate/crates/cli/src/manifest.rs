//! Run manifests: everything needed to re-run a command and check that it
//! reproduced the same bytes.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::UsageError;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "echosim-run";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path, content: &[u8]) -> Self {
        FileDigest { path: path.to_path_buf(), sha256: sha256_hex(content), bytes: content.len() as u64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub seed: u64,
    pub model_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_seconds: f64,
    pub run_seconds: f64,
    pub write_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    /// Worker threads used; outputs do not depend on it.
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    /// Artifact paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub timings: Timings,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            format: FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            seeds: Seeds { seed: config.seed, model_seed: config.model_seed },
            threads: rayon::current_num_threads(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Timings::default(),
        }
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| UsageError(format!("manifest {}: {e}", path.display())))?;
        if m.format != FORMAT {
            return Err(UsageError(format!("{} is not an echosim run manifest", path.display())).into());
        }
        Ok(m)
    }

    pub fn to_json(&self) -> anyhow::Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
