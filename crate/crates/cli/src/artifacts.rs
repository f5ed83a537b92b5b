//! On-disk run artifacts. Each one records the hash of the configuration
//! that produced it; commands refuse to combine artifacts from different
//! configurations.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mctsep::datasets::{read_jsonl, read_manifest, write_atomic, DatasetManifest, ManifestInfo, Record};
use mctsep::eval::EvalReport;
use mctsep::policy::PolicyParams;
use mctsep::training::{IterationReport, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{DataError, RunConfig};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// Hex SHA-256 prefix of a training configuration.
pub fn train_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("train config serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..12])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub train_hash: String,
    pub created_at: u64,
    /// `init`, `warmup`, `sft`, `dpo` or `iteration`.
    pub phase: String,
    pub iteration: Option<usize>,
    pub params: PolicyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub created_at: u64,
    pub task: String,
    pub tree_id: String,
    pub nodes: usize,
    pub completed_leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    pub config_hash: String,
    pub created_at: u64,
    /// Config hash of the evaluated checkpoint, if any.
    pub checkpoint: Option<String>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub config_hash: String,
    pub report: IterationReport,
}

/// Standard locations inside the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.run.output_dir.clone(),
        }
    }

    pub fn tree(&self, task: &str) -> PathBuf {
        self.root.join("trees").join(format!("{}.json", file_stem(task)))
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.json"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn iteration_dir(&self, i: usize) -> PathBuf {
        self.root.join("loop").join(format!("iter-{i:03}"))
    }
}

/// Task ids contain slashes; flatten them for file names.
pub fn file_stem(task: &str) -> String {
    task.replace(['/', '\\'], "-")
}

pub fn check_hash(found: &str, expected: &str, what: &Path) -> Result<()> {
    if found != expected {
        return Err(DataError(format!(
            "{} was produced under config {found}, but this run uses config {expected}",
            what.display()
        ))
        .into());
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| DataError(format!("{}: {e}", path.display())).into())
}

impl Checkpoint {
    pub fn new(cfg: &RunConfig, phase: &str, iteration: Option<usize>, params: PolicyParams) -> Self {
        Self {
            format_version: ARTIFACT_FORMAT_VERSION,
            config_hash: cfg.hash(),
            train_hash: train_hash(&cfg.train),
            created_at: cfg.run.created_at,
            phase: phase.into(),
            iteration,
            params,
        }
    }

    /// Loads a checkpoint and checks that it belongs to this configuration.
    pub fn load(path: &Path, cfg: &RunConfig) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        if ck.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(DataError(format!(
                "{}: checkpoint format {} (expected {ARTIFACT_FORMAT_VERSION})",
                path.display(),
                ck.format_version
            ))
            .into());
        }
        // Re-validate the parameter block (versions, finiteness).
        PolicyParams::from_json(&ck.params.to_json()).with_context(|| path.display().to_string())?;
        check_hash(&ck.config_hash, &cfg.hash(), path)?;
        Ok(ck)
    }
}

/// Reads a dataset and checks its manifest hash. `allow_unstamped` accepts
/// files without a manifest (hand-made expert files).
pub fn load_dataset<T: Record>(path: &Path, cfg: &RunConfig, allow_unstamped: bool) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(DataError(format!("{}: dataset not found", path.display())).into());
    }
    let manifest: Option<DatasetManifest> = match read_manifest(path) {
        Ok(m) => Some(m),
        Err(_) if allow_unstamped && !mctsep::datasets::manifest_path(path).exists() => None,
        Err(e) => return Err(e.into()),
    };
    let items = read_jsonl::<T>(path)?;
    if let Some(m) = manifest {
        check_hash(&m.config_hash, &cfg.hash(), path)?;
        if m.count != items.len() {
            return Err(DataError(format!(
                "{}: manifest counts {} records, file holds {}",
                path.display(),
                m.count,
                items.len()
            ))
            .into());
        }
    }
    Ok(items)
}

pub fn manifest_info(cfg: &RunConfig) -> ManifestInfo {
    ManifestInfo {
        config_hash: cfg.hash(),
        created_at: cfg.run.created_at,
    }
}
