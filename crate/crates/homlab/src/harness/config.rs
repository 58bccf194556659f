//! Run configuration: one JSON document, unknown keys rejected.

use crate::domain::{MeshParams, Rect};
use crate::error::{HomlabError, Stage};
use crate::fem::CoefficientField;
use crate::singular::{SolverParams, SourceSpec};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Coefficient matrix descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Identity,
    /// `factor * I`.
    Scaled { factor: f64 },
    /// Constant 2x2 matrix, row major.
    Matrix { rows: [[f64; 2]; 2] },
}

impl CoefficientSpec {
    pub fn build(&self, mesh: &crate::domain::Mesh) -> Result<CoefficientField, HomlabError> {
        match *self {
            CoefficientSpec::Identity => Ok(CoefficientField::identity(mesh)),
            CoefficientSpec::Scaled { factor } => {
                CoefficientField::constant(mesh, [factor, 0.0, 0.0, factor])
            }
            CoefficientSpec::Matrix { rows } => {
                CoefficientField::constant(mesh, [rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
            }
        }
    }
}

/// Full sweep configuration with defaults for every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Strictly decreasing scale schedule.
    pub epsilon_list: Vec<f64>,
    pub c0: f64,
    pub domain: Rect,
    pub mesh: MeshParams,
    pub coefficient: CoefficientSpec,
    pub source: SourceSpec,
    pub solver: SolverParams,
    /// Truncation levels for the excess-energy profile.
    pub k_levels: Vec<f64>,
    /// Near-zero cutoff levels (each should quarter the previous one to
    /// expose the decay trend).
    pub delta_levels: Vec<f64>,
    /// Tensor sine modes used as fixed weak-pairing test functions.
    pub test_modes: Vec<[u32; 2]>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            epsilon_list: vec![0.5, 1.0 / 3.0, 0.25],
            c0: 1.0,
            domain: Rect::unit_square(),
            mesh: MeshParams::default(),
            coefficient: CoefficientSpec::Identity,
            source: SourceSpec::Constant { f: 1.0 },
            solver: SolverParams::default(),
            k_levels: vec![0.5, 1.0, 2.0, 4.0],
            delta_levels: vec![0.1, 0.025, 0.00625],
            test_modes: vec![[1, 1], [2, 1], [1, 2]],
            out_dir: None,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), HomlabError> {
        if self.epsilon_list.is_empty() {
            return Err(HomlabError::Config("epsilon_list is empty".into()));
        }
        for w in self.epsilon_list.windows(2) {
            if !(w[1] < w[0]) {
                return Err(HomlabError::Config(format!(
                    "epsilon_list must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if !self.epsilon_list.iter().all(|&e| e > 0.0 && e.is_finite()) {
            return Err(HomlabError::Config("epsilon values must be positive".into()));
        }
        if !(self.c0 > 0.0) {
            return Err(HomlabError::Config("c0 must be positive".into()));
        }
        self.solver.validate()?;
        if self.k_levels.iter().any(|&k| !(k > 0.0)) {
            return Err(HomlabError::Config("k_levels must be positive".into()));
        }
        if self.delta_levels.iter().any(|&d| !(d > 0.0)) {
            return Err(HomlabError::Config("delta_levels must be positive".into()));
        }
        if self.test_modes.iter().any(|m| m[0] == 0 || m[1] == 0) {
            return Err(HomlabError::Config("test_modes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HomlabError> {
        let cfg: SweepConfig = serde_json::from_str(text)
            .map_err(|e| HomlabError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HomlabError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HomlabError::stage(Stage::Config, format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_roundtrips() {
        let cfg = SweepConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_json();
        let back = SweepConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = SweepConfig::from_json(r#"{"c0": 1.0, "turbo": true}"#).unwrap_err();
        assert!(err.to_string().contains("turbo"));
    }

    #[test]
    fn non_decreasing_schedule_rejected() {
        let err = SweepConfig::from_json(r#"{"epsilon_list": [0.25, 0.5]}"#).unwrap_err();
        assert!(err.to_string().contains("strictly decreasing"));
    }

    #[test]
    fn empty_schedule_rejected() {
        assert!(SweepConfig::from_json(r#"{"epsilon_list": []}"#).is_err());
    }

    #[test]
    fn source_specs_parse() {
        let cfg = SweepConfig::from_json(
            r#"{"source": {"kind": "power", "h": 1.0, "gamma": 2.0}}"#,
        )
        .unwrap();
        assert_eq!(
            cfg.source,
            SourceSpec::Power {
                h: 1.0,
                gamma: 2.0,
                envelope_h: None
            }
        );
    }
}
