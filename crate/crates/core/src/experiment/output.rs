//! Artifact layout, manifest, and replay.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{evaluate, ExitStatus, ExperimentConfig, ExperimentOutcome};
use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun an experiment. Holds no timestamps, so two
/// runs of the same config write identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool_version: String,
    /// Fully resolved config, defaults filled in.
    pub config: ExperimentConfig,
    pub status: ExitStatus,
    /// SHA-256 of the evaluation pool (comma-separated per family for
    /// gradcheck).
    pub pool_hash: Option<String>,
    pub training_seed: Option<u64>,
    /// Output files, relative to the manifest's directory.
    pub files: Vec<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("manifest at `{path}`: {}", e.into_inner()))
        })
    }
}

fn write_file(dir: &Path, rel: &str, contents: &str) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

/// Writes `results.csv`, `summary.txt`, any per-run files and
/// `manifest.json` into `cfg.output_dir`.
pub fn write_outcome(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<Manifest> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![RESULTS_FILE.to_string(), SUMMARY_FILE.to_string()];
    write_file(dir, RESULTS_FILE, &outcome.results_csv)?;
    write_file(dir, SUMMARY_FILE, &outcome.summary)?;
    for (rel, contents) in &outcome.extra_files {
        write_file(dir, rel, contents)?;
        files.push(rel.clone());
    }
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        status: outcome.status,
        pool_hash: outcome.pool_hash.clone(),
        training_seed: outcome.training_seed,
        files,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(dir, MANIFEST_FILE, &json)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub original_dir: PathBuf,
    pub replay_dir: PathBuf,
    /// Files whose bytes differ, or that are missing on either side.
    pub mismatched: Vec<String>,
    pub pool_hash_matches: bool,
    pub outcome: ExperimentOutcome,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty() && self.pool_hash_matches
    }
}

/// Reruns the experiment recorded in `manifest_path`, writing into
/// `out_dir`, and compares every listed file byte for byte with the
/// original.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<ReplayReport> {
    let manifest = Manifest::load(manifest_path)?;
    let original_dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut cfg = manifest.config.clone();
    cfg.output_dir = out_dir.to_path_buf();
    cfg.validate()?;
    let outcome = evaluate(&cfg)?;
    let written = write_outcome(&cfg, &outcome)?;

    let mut mismatched = Vec::new();
    for rel in manifest
        .files
        .iter()
        .chain(written.files.iter().filter(|f| !manifest.files.contains(f)))
    {
        let a = fs::read(original_dir.join(rel)).ok();
        let b = fs::read(out_dir.join(rel)).ok();
        if a.is_none() || a != b {
            mismatched.push(rel.clone());
        }
    }
    Ok(ReplayReport {
        original_dir,
        replay_dir: out_dir.to_path_buf(),
        mismatched,
        pool_hash_matches: manifest.pool_hash == outcome.pool_hash,
        outcome,
    })
}
