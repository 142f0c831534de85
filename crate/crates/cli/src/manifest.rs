use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::fld::{write_atomic, FldArray};
use crate::pgm;

/// Key holding wall times; the only nondeterministic part of a manifest.
pub const WALL_KEY: &str = "wall_seconds";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub versions: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, Value>,
    /// SHA-256 of every deterministic output file.
    pub outputs: BTreeMap<String, String>,
    /// Outputs that embed timings, listed without a hash.
    pub timed_outputs: Vec<String>,
    pub wall_seconds: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config_sha256: String) -> Self {
        let versions = [
            ("mrpd-core".to_string(), mrpd_core::VERSION.to_string()),
            ("mrpd-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]
        .into_iter()
        .collect();
        Self {
            command: command.to_string(),
            config_sha256,
            seeds: BTreeMap::new(),
            versions,
            metrics: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timed_outputs: Vec::new(),
            wall_seconds: BTreeMap::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Into<Value>) {
        self.metrics.insert(key.to_string(), value.into());
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// The manifest without its wall-time block, for reproducibility checks.
    pub fn deterministic_json(text: &str) -> Result<String, CliError> {
        let mut v: Value = serde_json::from_str(text).map_err(|e| CliError::Format(format!("manifest: {e}")))?;
        if let Value::Object(m) = &mut v {
            m.remove(WALL_KEY);
        }
        Ok(v.to_string())
    }
}

/// Output directory that records a hash for everything written through it.
pub struct OutputDir {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl OutputDir {
    pub fn create(dir: &Path, manifest: RunManifest) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        write_atomic(&path, bytes)?;
        self.manifest.outputs.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn fld(&mut self, name: &str, arr: &FldArray) -> Result<(), CliError> {
        self.put(name, &arr.to_bytes())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.put(name, text.as_bytes())
    }

    pub fn timed_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), text.as_bytes())?;
        self.manifest.timed_outputs.push(name.to_string());
        Ok(())
    }

    pub fn preview(&mut self, name: &str, height: usize, width: usize, data: &[f64]) -> Result<(), CliError> {
        self.put(name, &pgm::encode(height, width, data))
    }

    pub fn finish(self) -> Result<RunManifest, CliError> {
        write_atomic(&self.dir.join("manifest.json"), self.manifest.to_json().as_bytes())?;
        Ok(self.manifest)
    }
}
