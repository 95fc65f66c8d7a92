//! Run manifests recording the command, its resolved configuration and
//! seed, and SHA-256 hashes of its inputs and outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Run manifests are named `run_*.json`.
fn is_manifest(name: &str) -> bool {
    name.starts_with("run_") && name.ends_with(".json")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileHash>,
    pub versions: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            files_under(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// One digest for a whole directory: the hash of every relative path and
/// file hash, in sorted order. Run manifests at the top level are skipped.
pub fn hash_dir(dir: &Path) -> Result<String, CliError> {
    let mut files = Vec::new();
    files_under(dir, &mut files)?;
    let mut lines: Vec<String> = files
        .iter()
        .filter(|p| p.parent() != Some(dir) || !p.file_name().is_some_and(|n| is_manifest(&n.to_string_lossy())))
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            Ok(format!("{rel} {}\n", hash_file(p)?))
        })
        .collect::<Result<_, CliError>>()?;
    lines.sort();
    Ok(sha256_hex(lines.concat().as_bytes()))
}

pub fn input_hash(path: &Path) -> Result<FileHash, CliError> {
    let sha256 = if path.is_dir() { hash_dir(path)? } else { hash_file(path)? };
    Ok(FileHash {
        path: path.display().to_string(),
        sha256,
    })
}

fn versions() -> serde_json::Value {
    serde_json::json!({
        "cloudcast": env!("CARGO_PKG_VERSION"),
        "checkpoint_format": String::from_utf8_lossy(cloudcast_core::checkpoint::MAGIC),
    })
}

/// Collects the files a command writes and records them in a manifest.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(rel);
        Ok(path)
    }

    /// Registers a file written by other code.
    pub fn record(&mut self, rel: &str) {
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
    }

    /// Writes `run_manifest.json`.
    pub fn finish(
        self,
        command: &str,
        config: serde_json::Value,
        seed: u64,
        inputs: Vec<FileHash>,
    ) -> Result<RunManifest, CliError> {
        self.finish_as(MANIFEST_FILE, command, config, seed, inputs)
    }

    pub fn finish_as(
        mut self,
        file: &str,
        command: &str,
        config: serde_json::Value,
        seed: u64,
        inputs: Vec<FileHash>,
    ) -> Result<RunManifest, CliError> {
        self.written.sort();
        let outputs = self
            .written
            .iter()
            .map(|rel| {
                Ok(FileHash {
                    path: rel.clone(),
                    sha256: hash_file(&self.root.join(rel))?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let manifest = RunManifest {
            command: command.to_string(),
            config,
            seed,
            inputs,
            outputs,
            versions: versions(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        debug_assert!(is_manifest(file));
        let path = self.root.join(file);
        fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
