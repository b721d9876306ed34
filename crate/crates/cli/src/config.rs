//! Experiment configuration: strict JSON with defaults, overridable by flags.

use serde::{Deserialize, Serialize};

use gff_core::clusters::CapacityOptions;
use gff_core::montecarlo::{ExperimentKind, ExperimentSpec, DEFAULT_BATCH};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigKind {
    Green,
    Sample,
    #[default]
    Estimate,
    Verify,
    Fit,
    Sweep,
}

fn schema() -> u32 {
    SCHEMA_VERSION
}
fn three() -> usize {
    3
}
fn four() -> usize {
    4
}
fn default_scales() -> Vec<usize> {
    vec![8, 12, 16, 24, 32]
}
fn default_trials() -> u64 {
    1000
}
fn default_batch() -> u64 {
    DEFAULT_BATCH
}
fn default_budget() -> usize {
    8192
}

/// Effective configuration of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub kind: ConfigKind,
    /// Estimate or verify sub-kind; for sweeps, the estimates to run.
    #[serde(default)]
    pub experiments: Vec<String>,
    #[serde(default = "three")]
    pub d: usize,
    #[serde(default = "default_scales")]
    pub scales: Vec<usize>,
    #[serde(default)]
    pub inner: Vec<usize>,
    #[serde(default)]
    pub chi: Vec<f64>,
    #[serde(default)]
    pub m_grid: Vec<usize>,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default = "four")]
    pub box_factor: usize,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed_base: u64,
    /// 0: all available cores.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default = "default_batch")]
    pub batch_size: u64,
    #[serde(default = "default_budget")]
    pub memory_budget_mib: usize,
    #[serde(default)]
    pub capacity: CapacityOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults parse")
    }
}

/// Values given on the command line; they win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output: Option<String>,
    pub d: Option<usize>,
    pub trials: Option<u64>,
    pub scales: Option<Vec<usize>>,
    pub inner: Option<Vec<usize>>,
    pub chi: Option<Vec<f64>>,
    pub m_grid: Option<Vec<usize>>,
    pub thresholds: Option<Vec<f64>>,
    pub box_factor: Option<usize>,
    pub batch_size: Option<u64>,
}

fn offending_key(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

impl ExperimentConfig {
    /// Parses `text` (empty means all defaults), applies `flags` and
    /// validates. Returns the config and any warnings.
    pub fn parse(text: &str, flags: &Overrides) -> Result<(Self, Vec<String>), CliError> {
        let mut cfg: ExperimentConfig = if text.trim().is_empty() {
            ExperimentConfig::default()
        } else {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| {
                let path = e.path().to_string();
                let msg = e.inner().to_string();
                CliError::Validation {
                    key: if path == "." { offending_key(&msg) } else { path },
                    message: msg,
                }
            })?
        };
        cfg.apply(flags);
        let warnings = cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn apply(&mut self, f: &Overrides) {
        macro_rules! set {
            ($($field:ident <- $flag:ident),*) => {
                $(if let Some(v) = &f.$flag { self.$field = v.clone(); })*
            };
        }
        set!(seed_base <- seed, threads <- threads, d <- d, trials <- trials, scales <- scales,
             inner <- inner, chi <- chi, m_grid <- m_grid, thresholds <- thresholds,
             box_factor <- box_factor, batch_size <- batch_size);
        if let Some(o) = &f.output {
            self.output = Some(o.clone());
        }
    }

    pub fn validate(&self) -> Result<Vec<String>, CliError> {
        let bad = |key: &str, message: String| {
            Err(CliError::Validation {
                key: key.into(),
                message,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            return bad(
                "schema_version",
                format!("unsupported schema version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        if self.d < 3 {
            return bad("d", format!("d = {} is below 3", self.d));
        }
        if self.d == 6 {
            return bad("d", "d = 6 is the critical dimension and is not supported".into());
        }
        if self.box_factor == 0 {
            return bad("box_factor", "must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.scales.iter().any(|&n| n == 0) {
            return bad("scales", "scales must be positive".into());
        }
        for e in &self.experiments {
            let known = match self.kind {
                ConfigKind::Verify => ["arcsin", "conditional", "density", "kernel"].contains(&e.as_str()),
                _ => ExperimentKind::from_name(e).is_some(),
            };
            if !known {
                return bad("experiments", format!("unknown experiment `{e}`"));
            }
        }
        let mut warnings = Vec::new();
        if self.d >= 7 {
            warnings.push(format!(
                "d = {}: quantitative exponent targets for d >= 6 are out of desk scale",
                self.d
            ));
        }
        Ok(warnings)
    }

    pub fn emit(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Estimation spec for `kind`.
    pub fn spec(&self, kind: ExperimentKind) -> ExperimentSpec {
        ExperimentSpec {
            kind,
            d: self.d,
            scales: self.scales.clone(),
            inner: self.inner.clone(),
            chi: self.chi.clone(),
            m_grid: self.m_grid.clone(),
            thresholds: self.thresholds.clone(),
            box_factor: self.box_factor,
            trials: self.trials,
            seed_base: self.seed_base,
            batch_size: self.batch_size,
            capacity: self.capacity,
            memory_budget: self.memory_budget_mib << 20,
        }
    }

    /// Estimate kinds this config runs.
    pub fn estimate_kinds(&self) -> Result<Vec<ExperimentKind>, CliError> {
        if self.experiments.is_empty() {
            return Err(CliError::Validation {
                key: "experiments".into(),
                message: "no experiment selected".into(),
            });
        }
        Ok(self
            .experiments
            .iter()
            .map(|e| ExperimentKind::from_name(e).expect("validated"))
            .collect())
    }

    /// Keys whose values differ from `other`, for refusal messages.
    pub fn diff(&self, other: &ExperimentConfig) -> Vec<String> {
        let a = serde_json::to_value(self).unwrap();
        let b = serde_json::to_value(other).unwrap();
        let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, v)| format!("{k}: {} -> {}", b.get(k).unwrap_or(&serde_json::Value::Null), v))
            .collect()
    }
}
