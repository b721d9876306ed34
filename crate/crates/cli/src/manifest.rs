//! Run directories: effective config, manifest, append-only results.
//!
//! A run directory holds `config.json` (the effective config),
//! `manifest.json` (config hash and per-point status), `results.jsonl`
//! (one estimate record per line, no timings) and `timings.jsonl`.
//! Points run in manifest order; after each point its records are appended
//! and the manifest records the results length, so a resumed run truncates
//! any partial tail and continues with the first incomplete point.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use gff_core::montecarlo::{run_point, ExperimentKind, ExperimentSpec};
use gff_core::par::Execution;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointStatus {
    pub experiment: ExperimentKind,
    pub index: usize,
    pub stream: u64,
    /// Reserved replica indices `[start, end)`.
    pub replicas: (u64, u64),
    pub complete: bool,
    /// Length of the results file once this point was written.
    pub results_len: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub points: Vec<PointStatus>,
}

/// SHA-256 of the compact JSON form of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let mut points = Vec::new();
        for kind in cfg.estimate_kinds()? {
            let spec = cfg.spec(kind);
            for p in spec.points() {
                points.push(PointStatus {
                    experiment: kind,
                    index: p.index,
                    stream: spec.stream(&p),
                    replicas: (0, spec.trials),
                    complete: false,
                    results_len: None,
                });
            }
        }
        Ok(RunManifest {
            config_hash: config_hash(cfg),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.clone(),
            points,
        })
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.points.iter().all(|p| p.complete)
    }
}

/// A run directory.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    /// Creates a fresh run; refuses to overwrite an existing one.
    pub fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self, CliError> {
        if dir.join(MANIFEST_FILE).exists() {
            return Err(CliError::Validation {
                key: "output".into(),
                message: format!("{} already holds a run; use `resume`", dir.display()),
            });
        }
        fs::create_dir_all(dir)?;
        for kind in cfg.estimate_kinds()? {
            let exec = Execution::threads(cfg.threads);
            cfg.spec(kind).plan(exec)?;
        }
        let manifest = RunManifest::new(cfg)?;
        fs::write(dir.join(CONFIG_FILE), cfg.emit())?;
        fs::write(dir.join(RESULTS_FILE), "")?;
        fs::write(dir.join(TIMINGS_FILE), "")?;
        manifest.save(dir)?;
        Ok(Run {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Reopens a run after checking the config against the manifest.
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        let manifest = RunManifest::load(dir)?;
        let text = fs::read_to_string(dir.join(CONFIG_FILE))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| CliError::Validation {
            key: CONFIG_FILE.into(),
            message: e.to_string(),
        })?;
        if config_hash(&cfg) != manifest.config_hash {
            let diff = cfg.diff(&manifest.config);
            return Err(CliError::Validation {
                key: CONFIG_FILE.into(),
                message: format!(
                    "config does not match the manifest hash; changed: {}",
                    if diff.is_empty() { "formatting only".into() } else { diff.join(", ") }
                ),
            });
        }
        Ok(Run {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Runs incomplete points in order; stops after `limit` points if set.
    /// Returns the number of points run.
    pub fn advance(&mut self, limit: Option<usize>) -> Result<usize, CliError> {
        let cfg = self.manifest.config.clone();
        let exec = Execution::threads(cfg.threads);
        let results = self.dir.join(RESULTS_FILE);
        let keep = self
            .manifest
            .points
            .iter()
            .filter_map(|p| p.results_len)
            .max()
            .unwrap_or(0);
        OpenOptions::new().write(true).open(&results)?.set_len(keep)?;
        let mut ran = 0;
        for k in 0..self.manifest.points.len() {
            if self.manifest.points[k].complete {
                continue;
            }
            if limit.is_some_and(|l| ran >= l) {
                break;
            }
            let status = &self.manifest.points[k];
            let spec: ExperimentSpec = cfg.spec(status.experiment);
            let point = spec
                .points()
                .into_iter()
                .find(|p| p.index == status.index)
                .expect("manifest matches the config");
            let records = run_point(&spec, &point, exec)?;
            let mut out = OpenOptions::new().append(true).open(&results)?;
            let mut timings = OpenOptions::new().append(true).open(self.dir.join(TIMINGS_FILE))?;
            for mut r in records {
                writeln!(
                    timings,
                    "{}",
                    serde_json::json!({"experiment": r.experiment, "point": point.index, "wall_time": r.wall_time})
                )?;
                r.wall_time = None;
                writeln!(out, "{}", r.to_json_line())?;
            }
            out.sync_all()?;
            let len = fs::metadata(&results)?.len();
            let status = &mut self.manifest.points[k];
            status.complete = true;
            status.results_len = Some(len);
            self.manifest.save(&self.dir)?;
            ran += 1;
        }
        Ok(ran)
    }
}
