use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use diffbal::io::{to_json, SCHEMA_VERSION};
use diffbal::{GramianMethod, ModelSpec, Result, Scheme};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
}

/// Everything needed to re-run a command, plus hashes of what it wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    /// Command line after the program name.
    pub args: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_spec: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<GramianMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// sha256 of every file read, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every artifact, keyed by file name inside `out_dir`.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, seed: u64, out_dir: PathBuf) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            args,
            model: None,
            model_spec: None,
            grid: None,
            scheme: None,
            method: None,
            s: None,
            seed,
            out_dir,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn file_name(&self) -> String {
        format!("manifest-{}.json", self.command)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects artifacts written by one command and the manifest describing it.
pub struct Run {
    pub manifest: RunManifest,
    pub parallel: bool,
}

impl Run {
    pub fn out(&self) -> &Path {
        &self.manifest.out_dir
    }

    pub fn seed(&self) -> u64 {
        self.manifest.seed
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.out().join(name), contents)?;
        self.manifest
            .artifacts
            .insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    pub fn read_input(&mut self, path: &Path) -> Result<String> {
        let text = std::fs::read_to_string(path)?;
        self.manifest
            .inputs
            .insert(path.display().to_string(), sha256_hex(text.as_bytes()));
        Ok(text)
    }

    pub fn finish(self) -> Result<RunManifest> {
        let path = self.out().join(self.manifest.file_name());
        std::fs::write(path, to_json(&self.manifest)?)?;
        Ok(self.manifest)
    }
}
