use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `MANIFEST.json` of one CLI run.
///
/// Only `timing` depends on the clock; everything else is a function of the
/// configuration, the inputs and the seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub status: String,
    pub config_hash: String,
    pub seed: u64,
    /// config key to SHA-256 of the file it names
    pub inputs: BTreeMap<String, String>,
    /// file name under `--out` to SHA-256
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
    pub timing: Timing,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_at: String,
    pub wall_clock_secs: f64,
}

pub const MANIFEST_FILE: &str = "MANIFEST.json";

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn add_input(&mut self, key: &str, path: Option<&Path>) -> Result<()> {
        if let Some(p) = path {
            if p.is_file() {
                self.inputs.insert(key.to_string(), file_sha256(p)?);
            }
        }
        Ok(())
    }

    pub fn add_output(&mut self, out: &Path, name: &str) -> Result<()> {
        self.outputs.insert(name.to_string(), file_sha256(&out.join(name))?);
        Ok(())
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let path = out.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// A copy with the clock-dependent fields cleared, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut m = self.clone();
        m.timing = Timing::default();
        if let Some(log) = m.summary.get_mut("train_log").and_then(|v| v.as_object_mut()) {
            log.insert("wall_clock_secs".into(), serde_json::json!(0.0));
        }
        m
    }
}
