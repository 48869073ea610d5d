//! Self-describing experiment configuration: one JSON document per run,
//! carrying the reflection data, the potential, the simulation parameters
//! and free-form command options, under the schema tag `grbm-config/1`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ReflectionData;
use crate::potential::{Potential, PotentialError, PotentialSpec};
use crate::sde::{SdeError, SimConfig};

/// Schema version tag embedded in every config document.
pub const SCHEMA_VERSION: &str = "grbm-config/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema version {0:?} (expected {SCHEMA_VERSION:?})")]
    Schema(String),
    #[error("potential error: {0}")]
    Potential(#[from] PotentialError),
    #[error("simulation parameter error: {0}")]
    Sim(#[from] SdeError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("option {0:?}: {1}")]
    Option(String, String),
}

/// A complete, archivable description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema: String,
    pub data: ReflectionData,
    pub potential: PotentialSpec,
    pub sim: SimConfig,
    /// Command-specific options, kept as raw JSON values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub options: BTreeMap<String, serde_json::Value>,
}

impl ExperimentConfig {
    pub fn new(data: ReflectionData, potential: PotentialSpec, sim: SimConfig) -> Self {
        Self {
            schema: SCHEMA_VERSION.to_string(),
            data,
            potential,
            sim,
            options: BTreeMap::new(),
        }
    }

    pub fn with_option(mut self, key: &str, value: serde_json::Value) -> Self {
        self.options.insert(key.to_string(), value);
        self
    }

    /// Parses a document and checks the schema tag and the simulation
    /// parameters. Structural validity of the reflection data is reported
    /// separately by [`ReflectionData::validate`].
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(ConfigError::Schema(cfg.schema));
        }
        cfg.sim.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("config serializes");
        out.push('\n');
        out
    }

    pub fn build_potential(&self) -> Result<Potential, ConfigError> {
        Ok(self.potential.build()?)
    }

    /// Reads a scalar option, or the given default when absent.
    pub fn option_f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.options.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| ConfigError::Option(key.to_string(), "expected a number".into())),
        }
    }

    pub fn option_usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.options.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|u| u as usize)
                .ok_or_else(|| ConfigError::Option(key.to_string(), "expected an integer".into())),
        }
    }

    pub fn option_str(&self, key: &str) -> Option<&str> {
        self.options.get(key).and_then(|v| v.as_str())
    }

    pub fn option_vec_f64(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.options.get(key) {
            None => Ok(None),
            Some(v) => {
                let arr = v.as_array().ok_or_else(|| {
                    ConfigError::Option(key.to_string(), "expected an array of numbers".into())
                })?;
                let mut out = Vec::with_capacity(arr.len());
                for x in arr {
                    out.push(x.as_f64().ok_or_else(|| {
                        ConfigError::Option(key.to_string(), "expected an array of numbers".into())
                    })?);
                }
                Ok(Some(out))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DomainKind, ReflectionData};
    use nalgebra::{DMatrix, DVector};

    fn sample_config() -> ExperimentConfig {
        let data = ReflectionData::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DVector::from_vec(vec![1.0, 1.0]),
            DMatrix::identity(2, 2),
            DomainKind::Orthant,
        )
        .unwrap();
        let potential = PotentialSpec {
            name: "exponential".to_string(),
            params: Default::default(),
        };
        let sim = SimConfig {
            dt: 1e-3,
            t_max: 1.0,
            burn_in: 0.1,
            seed: 7,
            x0: vec![0.5, 0.5],
            n_paths: 2,
            save_every: 1,
        };
        ExperimentConfig::new(data, potential, sim)
            .with_option("points", serde_json::json!([[0.5, 0.5]]))
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = sample_config();
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(back.data, cfg.data);
    }

    #[test]
    fn rejects_wrong_schema() {
        let mut cfg = sample_config();
        cfg.schema = "grbm-config/0".to_string();
        let err = ExperimentConfig::from_json(&cfg.to_json());
        assert!(matches!(err, Err(ConfigError::Schema(_))));
    }

    #[test]
    fn rejects_bad_sim_parameters() {
        let mut cfg = sample_config();
        cfg.sim.dt = -1.0;
        assert!(ExperimentConfig::from_json(&cfg.to_json()).is_err());
    }

    #[test]
    fn option_accessors() {
        let cfg = sample_config()
            .with_option("h", serde_json::json!(1e-3))
            .with_option("n", serde_json::json!(100))
            .with_option("mode", serde_json::json!("transform"))
            .with_option("betas", serde_json::json!([1.0, 4.0]));
        assert_eq!(cfg.option_f64("h", 0.0).unwrap(), 1e-3);
        assert_eq!(cfg.option_f64("missing", 2.5).unwrap(), 2.5);
        assert_eq!(cfg.option_usize("n", 0).unwrap(), 100);
        assert_eq!(cfg.option_str("mode"), Some("transform"));
        assert_eq!(cfg.option_vec_f64("betas").unwrap().unwrap(), vec![1.0, 4.0]);
        assert!(cfg.option_f64("mode", 0.0).is_err());
    }
}
