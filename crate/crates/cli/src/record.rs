//! Self-describing run records and atomic file output.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cdpo_core::eval::EvalResult;
use cdpo_core::genmodels::Checkpoint;
use cdpo_core::nuisance::NuisanceCheckpoint;
use cdpo_core::orthocheck::OrthoReport;
use cdpo_core::train::{EpochStats, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const RECORD_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Train,
    Evaluate,
    BenchmarkCell,
    Orthocheck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoints {
    /// Target model; `ema_params` holds the evaluated weights.
    pub target: Checkpoint,
    pub nuisance: Option<NuisanceCheckpoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub kind: RecordKind,
    pub version: String,
    pub git_rev: Option<String>,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub n_train: Option<usize>,
    pub train_config: Option<TrainConfig>,
    pub status: Status,
    pub error: Option<String>,
    pub checkpoints: Option<Checkpoints>,
    pub target_history: Vec<EpochStats>,
    pub evals: Vec<EvalResult>,
    pub orthocheck: Option<OrthoReport>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn new(kind: RecordKind, config: &ExperimentConfig, seed: u64, n_train: Option<usize>) -> Self {
        RunRecord {
            schema_version: RECORD_SCHEMA,
            kind,
            version: format!("cdpo-lab {}", env!("CARGO_PKG_VERSION")),
            git_rev: git_rev(),
            config_hash: String::new(),
            config: config.clone(),
            seed,
            n_train,
            train_config: None,
            status: Status::Ok,
            error: None,
            checkpoints: None,
            target_history: Vec::new(),
            evals: Vec::new(),
            orthocheck: None,
            wall_clock_secs: 0.0,
        }
    }

    pub fn fail(&mut self, err: &anyhow::Error) {
        self.status = Status::Error;
        self.error = Some(format!("{err:#}"));
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    /// Mean over arms of the per-arm aggregate centre for `metric`.
    pub fn arm_mean(&self, metric: cdpo_core::eval::Metric) -> Option<f64> {
        let v: Vec<f64> = self
            .evals
            .iter()
            .filter(|e| e.metric == metric)
            .map(|e| e.aggregate.center)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn git_rev() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing record {}", path.display()))
}

/// All `*.json` records directly under `dir`, sorted by file name.
pub fn list_records(dir: &Path) -> Result<Vec<(PathBuf, RunRecord)>> {
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect(),
        Err(_) => Vec::new(),
    };
    paths.sort();
    paths
        .into_iter()
        .map(|p| read_record(&p).map(|r| (p, r)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a").join("r.json");
        write_atomic(&p, b"{}").unwrap();
        write_atomic(&p, b"[]").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"[]");
        let n = std::fs::read_dir(p.parent().unwrap()).unwrap().count();
        assert_eq!(n, 1);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.seeds = vec![1];
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }

    #[test]
    fn record_round_trips() {
        let r = RunRecord::new(RecordKind::Train, &ExperimentConfig::default(), 3, Some(10));
        let back: RunRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(r, back);
    }
}
