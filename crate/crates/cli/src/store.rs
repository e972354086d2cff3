//! Artifacts in the work directory, atomic writes and run records.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// An upstream artifact that is not there yet; maps to exit code 3.
#[derive(Debug)]
pub struct MissingArtifact {
    pub path: PathBuf,
    pub producer: &'static str,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "missing {}; run `segspell {}` first",
            self.path.display(),
            self.producer
        )
    }
}

impl std::error::Error for MissingArtifact {}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    /// SHA-256 of every input, by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

/// One subcommand invocation: tracks what it reads and writes.
pub struct Run {
    pub root: PathBuf,
    pub cfg: ExperimentConfig,
    subcommand: &'static str,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(root: &Path, cfg: ExperimentConfig, subcommand: &'static str) -> Self {
        Run {
            root: root.to_path_buf(),
            cfg,
            subcommand,
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Record key of a path: relative to the work directory when inside it.
    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .display()
            .to_string()
    }

    /// Fails with the producing subcommand named when `path` is absent.
    pub fn require(&self, path: &Path, producer: &'static str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(MissingArtifact {
                path: path.to_path_buf(),
                producer,
            }
            .into())
        }
    }

    /// Reads and fingerprints an input.
    pub fn read(&mut self, path: &Path, producer: &'static str) -> Result<Vec<u8>> {
        self.require(path, producer)?;
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(self.key(path), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path, producer: &'static str) -> Result<String> {
        String::from_utf8(self.read(path, producer)?)
            .with_context(|| format!("{} is not UTF-8", path.display()))
    }

    /// Fingerprints many files under one key.
    pub fn record_inputs(&mut self, key: &Path, files: &[(String, Vec<u8>)]) {
        let mut h = Sha256::new();
        for (name, bytes) in files {
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        }
        self.inputs.insert(self.key(key), hex::encode(h.finalize()));
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(self.key(path));
        Ok(())
    }

    /// Writes `runs/<subcommand>.json`.
    pub fn finish(self) -> Result<RunRecord> {
        let record = RunRecord {
            subcommand: self.subcommand.to_string(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self
            .root
            .join("runs")
            .join(format!("{}.json", self.subcommand));
        write_atomic(&path, serde_json::to_string_pretty(&record)?.as_bytes())?;
        Ok(record)
    }
}
