//! Experiment configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::OffSupportSampler;
use crate::error::{Error, Result};
use crate::lagrangian::ModelSpec;
use crate::linfield::{OmegaFamily, OsiTolerances, DEFAULT_SIGMA_THRESHOLD};
use crate::manifold::{ChartManifold, Point};
use crate::measure::DiscreteMeasure;
use crate::optimizer::OptimizerConfig;
use crate::variations::ProbeConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialMeasure {
    Explicit {
        points: Vec<Point>,
        weights: Vec<f64>,
    },
    Generator {
        count: usize,
        seed: u64,
        total_volume: f64,
        /// Half width of the sampling box on flat space.
        #[serde(default = "one")]
        half_width: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl InitialMeasure {
    pub fn build(&self, manifold: &ChartManifold) -> Result<DiscreteMeasure> {
        match self {
            InitialMeasure::Explicit { points, weights } => {
                DiscreteMeasure::new(manifold.clone(), points.clone(), weights.clone())
            }
            InitialMeasure::Generator {
                count,
                seed,
                total_volume,
                half_width,
            } => {
                if *count == 0 {
                    return Err(crate::error::invalid("initial.count", "must be at least 1"));
                }
                if !(*total_volume > 0.0 && total_volume.is_finite()) {
                    return Err(crate::error::invalid(
                        "initial.total_volume",
                        "must be positive and finite",
                    ));
                }
                DiscreteMeasure::random(manifold.clone(), *count, *total_volume, *half_width, *seed)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative eigenvalue floor for PSD verdicts.
    pub tau_psd: f64,
    pub tol_weak_el: f64,
    /// Second-variation oracle agreement.
    pub fd_rel: f64,
    /// Relative floor `-tol |S|` for probed action changes.
    pub probe_nonnegative: f64,
    /// Quadratic-fit agreement in the stability probe.
    pub probe_fit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tau_psd: 1e-8,
            tol_weak_el: 1e-6,
            fd_rel: 1e-5,
            probe_nonnegative: 1e-12,
            probe_fit: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    /// Number of random volume-preserving jet fields.
    pub fields: usize,
    /// Stencil step relative to the jet's max-abs component.
    pub tau_step: f64,
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            fields: 20,
            tau_step: 1e-3,
            seed: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinfieldSettings {
    pub sigma_threshold: f64,
    /// Regions for the surface layer sweep; arcs in one dimension otherwise.
    pub omega: Option<OmegaFamily>,
    pub osi: OsiTolerances,
}

impl Default for LinfieldSettings {
    fn default() -> Self {
        LinfieldSettings {
            sigma_threshold: DEFAULT_SIGMA_THRESHOLD,
            omega: None,
            osi: OsiTolerances::default(),
        }
    }
}

fn default_off_support() -> OffSupportSampler {
    OffSupportSampler::new(2000, 5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub initial: InitialMeasure,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub linfield: LinfieldSettings,
    #[serde(default = "default_off_support")]
    pub off_support: OffSupportSampler,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, initial: InitialMeasure) -> Self {
        ExperimentConfig {
            model,
            initial,
            optimizer: OptimizerConfig::default(),
            tolerances: Tolerances::default(),
            probe: ProbeConfig::default(),
            oracle: OracleSettings::default(),
            linfield: LinfieldSettings::default(),
            off_support: default_off_support(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("field `{path}`: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |field: &str, e: Error| Error::Config(format!("field `{field}`: {e}"));
        self.model.validate().map_err(|e| ctx("model", e))?;
        self.optimizer.validate().map_err(|e| ctx("optimizer", e))?;
        self.probe.validate().map_err(|e| ctx("probe", e))?;
        self.initial
            .build(&self.model.manifold)
            .map_err(|e| ctx("initial", e))?;
        let t = &self.tolerances;
        for (name, v) in [
            ("tau_psd", t.tau_psd),
            ("tol_weak_el", t.tol_weak_el),
            ("fd_rel", t.fd_rel),
            ("probe_nonnegative", t.probe_nonnegative),
            ("probe_fit", t.probe_fit),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "field `tolerances.{name}`: must be positive"
                )));
            }
        }
        if !(self.oracle.tau_step > 0.0) || self.oracle.fields == 0 {
            return Err(Error::Config(
                "field `oracle`: needs a positive step and at least one field".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.linfield.sigma_threshold) {
            return Err(Error::Config(
                "field `linfield.sigma_threshold`: must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Replaces every seed in the config.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let InitialMeasure::Generator { seed: s, .. } = &mut self.initial {
            *s = seed;
        }
        self.probe.seed = seed;
        self.oracle.seed = seed;
        self.off_support.seed = seed;
        if let Some(OmegaFamily::RandomSubsets { seed: s, .. }) = &mut self.linfield.omega {
            *s = seed;
        }
        self
    }

    /// Seed of the initial-measure generator, falling back to the probe seed.
    pub fn seed(&self) -> u64 {
        match self.initial {
            InitialMeasure::Generator { seed, .. } => seed,
            InitialMeasure::Explicit { .. } => self.probe.seed,
        }
    }

    /// Lower-case hex SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {
            "manifold": {"kind": "torus", "dim": 1, "periods": [6.283185307179586]},
            "lagrangian": {"family": "gaussian", "params": {"width": 1.0}}
        },
        "initial": {"kind": "generator", "count": 5, "seed": 3, "total_volume": 5.0}
    }"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c.probe.trials, 100);
        assert_eq!(c.seed(), 3);
        let again = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn unknown_family_names_the_field() {
        let bad = MINIMAL.replace("gaussian", "lorentzian");
        let msg = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(msg.contains("model.lagrangian"), "{msg}");
        assert!(msg.contains("lorentzian"), "{msg}");
    }

    #[test]
    fn bad_tolerance_is_rejected() {
        let mut c = ExperimentConfig::from_json(MINIMAL).unwrap();
        c.tolerances.tau_psd = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("tau_psd"));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let bad = MINIMAL.replacen("\"model\"", "\"extra\": 1, \"model\"", 1);
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn seed_override_changes_hash() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let d = c.clone().with_seed(99);
        assert_eq!(d.seed(), 99);
        assert_eq!(d.probe.seed, 99);
        assert_ne!(c.hash().unwrap(), d.hash().unwrap());
    }
}
