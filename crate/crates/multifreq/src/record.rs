use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use multifreq_core::retrieval::{SolveReport, Termination};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Summary of one solver stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub iterations: usize,
    pub final_residual: f64,
    pub termination: Termination,
    pub seed: Option<u64>,
    pub wall_time_s: Option<f64>,
}

impl StageRecord {
    pub fn from_report(name: &str, r: &SolveReport) -> Self {
        Self {
            name: name.to_string(),
            iterations: r.iterations,
            final_residual: r.final_residual,
            termination: r.termination,
            seed: r.seed,
            wall_time_s: r.wall_time_s,
        }
    }
}

/// Provenance and results of one run, stored as `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub subcommand: String,
    /// SHA-256 of the effective configuration in canonical TOML form.
    pub config_hash: String,
    pub seed: u64,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub stages: Vec<StageRecord>,
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

impl RunRecord {
    pub fn start(subcommand: &str, config: &ScenarioConfig) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            subcommand: subcommand.to_string(),
            config_hash: config_hash(config),
            seed: config.seed,
            started_unix_s: unix_now(),
            finished_unix_s: 0.0,
            stages: Vec::new(),
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn finish(mut self) -> Self {
        self.finished_unix_s = unix_now();
        self
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.insert(key.into(), value);
    }
}

pub fn config_hash(config: &ScenarioConfig) -> String {
    Sha256::digest(config.to_toml().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
