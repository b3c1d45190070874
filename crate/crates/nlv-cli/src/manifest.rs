//! Run manifests: input hashes, seed, tool version, stage outcomes.
//!
//! Every output directory gets exactly one `manifest.json`. The manifest
//! carries timestamps and is therefore not itself byte-reproducible; all
//! other machine-readable outputs are.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub inputs: BTreeMap<String, InputRecord>,
    pub outputs: Vec<String>,
    pub stages: Vec<StageRecord>,
    pub exit_code: u8,
}

impl Manifest {
    pub fn begin(command: &str) -> Self {
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: None,
            threads: None,
            started_unix: unix_now(),
            finished_unix: 0,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
            exit_code: 0,
        }
    }

    pub fn record_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot hash input `{}`", path.display()))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(
            role.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256: hex,
            },
        );
        Ok(())
    }

    pub fn stage_ok(&mut self, name: &str) {
        self.stages.push(StageRecord {
            name: name.to_string(),
            status: "ok".to_string(),
        });
    }

    pub fn stage_skipped(&mut self, name: &str, why: &str) {
        self.stages.push(StageRecord {
            name: name.to_string(),
            status: format!("skipped: {why}"),
        });
    }

    pub fn stage_failed(&mut self, name: &str, error: &str) {
        self.stages.push(StageRecord {
            name: name.to_string(),
            status: format!("failed: {error}"),
        });
    }

    pub fn record_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn finish(&mut self, exit_code: u8, out_dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        self.exit_code = exit_code;
        let path = out_dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)
            .with_context(|| format!("cannot write `{}`", path.display()))?;
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
