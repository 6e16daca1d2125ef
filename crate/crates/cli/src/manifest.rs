use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use polarlt::{Error, Result};

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Full argument vector, enough to replay the run.
    pub arguments: Vec<String>,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub duration_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: String,
    config_hash: String,
    seed: Option<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started: Instant,
}

impl Recorder {
    pub fn new(command: &str, config: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config_hash: sha256_hex(config.as_bytes()),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn set_config_hash(&mut self, hash: String) {
        self.config_hash = hash;
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(self, path: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            arguments: std::env::args().collect(),
            config_hash: self.config_hash,
            seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_s: self.started.elapsed().as_secs_f64(),
        };
        let text =
            toml::to_string(&manifest).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        fs::write(path, text)?;
        Ok(path.to_path_buf())
    }
}

/// `out.pltt` → `out.pltt.manifest.toml`.
pub fn beside(file: &Path) -> PathBuf {
    let mut name = file.as_os_str().to_owned();
    name.push(".manifest.toml");
    PathBuf::from(name)
}
