//! Provenance embedded in every report: what was run, on which inputs, with
//! which settings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ObjectiveSpec;
use crate::quantifiers::QuantifierId;
use crate::supervisor::CalibrationMode;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub quantifiers: Vec<QuantifierId>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub betas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<CalibrationMode>,
    #[serde(default)]
    pub flags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifestError {
    #[error("input file `{0}` does not exist")]
    MissingInput(String),
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            ..Self::default()
        }
    }

    /// Check that inputs exist and every epsilon and beta is in range.
    pub fn check(&self) -> Result<(), ManifestError> {
        for input in &self.inputs {
            if !Path::new(input).exists() {
                return Err(ManifestError::MissingInput(input.clone()));
            }
        }
        if let Some(&eps) = self.epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(ManifestError::InvalidEpsilon(eps));
        }
        if let Some(&beta) = self.betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(ManifestError::InvalidBeta(beta));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_flags_bad_values() {
        let mut m = RunManifest::new("evaluate");
        m.epsilons = vec![0.1, 1.0];
        assert_eq!(m.check(), Err(ManifestError::InvalidEpsilon(1.0)));
        m.epsilons = vec![0.1];
        m.betas = vec![0.0];
        assert_eq!(m.check(), Err(ManifestError::InvalidBeta(0.0)));
        m.betas = vec![1.0];
        m.inputs = vec!["/definitely/not/here.jsonl".into()];
        assert!(matches!(m.check(), Err(ManifestError::MissingInput(_))));
    }
}
