//! Run manifest written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the effective configuration (TOML, after overrides).
    pub config_hash: String,
    pub seed: u64,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Tracks files written by one command.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Path of an output file, recorded for the inventory.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.written.iter().any(|n| n == name) {
            self.written.push(name.to_owned());
        }
        self.root.join(name)
    }

    /// Writes the manifest listing every recorded file that exists.
    pub fn finish(
        self,
        command: &str,
        config_text: &str,
        seed: u64,
        started: DateTime<Utc>,
    ) -> std::io::Result<RunManifest> {
        let mut outputs = Vec::new();
        for name in &self.written {
            let path = self.root.join(name);
            if let Ok(bytes) = fs::read(&path) {
                outputs.push(OutputFile {
                    name: name.clone(),
                    bytes: bytes.len() as u64,
                    sha256: sha256_hex(&bytes),
                });
            }
        }
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            config_hash: sha256_hex(config_text.as_bytes()),
            seed,
            started,
            finished: Utc::now(),
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
        fs::write(self.root.join(MANIFEST_NAME), text + "\n")?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn inventory_lists_existing_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        fs::write(out.file("a.csv"), "x\n1\n").unwrap();
        let _ = out.file("never_written.csv");
        let m = out.finish("simulate", "seed = 1\n", 1, Utc::now()).unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs[0].bytes, 4);
        assert_eq!(m.config_hash, sha256_hex(b"seed = 1\n"));
        assert!(dir.path().join(MANIFEST_NAME).exists());
    }
}
