//! Run state files: the measure, every computed report and the provenance of
//! the config that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::ElReport;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::jets::{GramReport, JetField};
use crate::linfield::OsiReport;
use crate::measure::DiscreteMeasure;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    /// SHA-256 of the effective config (after any seed override).
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub stage: String,
    pub deterministic: bool,
    /// Seconds since the epoch; omitted in deterministic mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub iterations: usize,
    pub converged: bool,
    pub weak_residual: f64,
    pub floored_points: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivitySummary {
    /// Smallest SP1 eigenvalue on the complement of the translation jets.
    pub sp1_min_modulo_translations: f64,
    pub sp1_scale: f64,
    pub strictly_positive_modulo_translations: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub fields: usize,
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// `|analytic - fd| / max(|fd|, scale)`
    pub max_error: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub trials: usize,
    pub action: f64,
    pub min_delta: f64,
    pub max_fit_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinfieldSummary {
    pub sigma_threshold: f64,
    pub scale: f64,
    pub translation_residuals: Vec<f64>,
    pub translation_span_residuals: Vec<f64>,
    pub kernel: Vec<JetField>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub measure: DiscreteMeasure,
    pub nu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub el: Option<ElReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gram: Vec<GramReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positivity: Option<PositivitySummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linfield: Option<LinfieldSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub osi: Vec<OsiReport>,
    pub verdicts: Vec<Verdict>,
}

impl RunState {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

pub fn save_state(state: &RunState, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(state)?)?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<RunState> {
    parse_state(&std::fs::read_to_string(path)?)
}

pub fn parse_state(text: &str) -> Result<RunState> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value
        .pointer("/provenance/schema_version")
        .and_then(|v| v.as_u64());
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(Error::State(format!(
            "schema version {version:?}, expected {SCHEMA_VERSION}"
        )));
    }
    let state: RunState = serde_json::from_value(value)?;
    let hash = state.config.hash()?;
    if hash != state.provenance.config_hash {
        return Err(Error::State(format!(
            "config hash {} does not match the embedded config ({hash})",
            state.provenance.config_hash
        )));
    }
    Ok(state)
}
