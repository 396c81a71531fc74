//! Threshold supervisor: accept a prediction when its uncertainty is strictly
//! below `t` (or its confidence strictly above `t`), with `t` calibrated on
//! benign validation inputs so that a target false-positive rate `epsilon` is
//! met.
//!
//! A false positive is a benign input that gets rejected. Candidate thresholds
//! are the observed benign scores plus an accept-all sentinel, since the
//! empirical FPR only changes at observed scores. Rejecting every benign input
//! (FPR = 1) is never a candidate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantifiers::{Orientation, QuantifiedPrediction, QuantifierId};

/// Target false-positive rates used when none are given.
pub const DEFAULT_EPSILONS: [f64; 3] = [0.01, 0.05, 0.1];

/// How the calibrated FPR relates to the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// Smallest achievable FPR that is at least `epsilon`.
    #[default]
    Above,
    /// Largest achievable FPR that is at most `epsilon`.
    AtMost,
}

impl fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibrationMode::Above => f.write_str("above"),
            CalibrationMode::AtMost => f.write_str("at-most"),
        }
    }
}

impl FromStr for CalibrationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "above" => Ok(CalibrationMode::Above),
            "at-most" | "at_most" => Ok(CalibrationMode::AtMost),
            other => Err(format!("unknown calibration mode `{other}` (expected above or at-most)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantifier: Option<QuantifierId>,
    #[serde(with = "crate::io::float_or_infinity")]
    pub threshold: f64,
    pub orientation: Orientation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<CalibrationMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_fpr: Option<f64>,
    /// Number of benign scores the threshold was calibrated on.
    #[serde(default)]
    pub calibration_size: usize,
    /// No candidate threshold could honour the requested mode, or the benign
    /// scores admit no threshold besides accept-all.
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SupervisorError {
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("no benign scores to calibrate on")]
    NoBenignScores,
    #[error("score #{index} is not finite ({value})")]
    NonFiniteScore { index: usize, value: f64 },
    #[error("orientation mismatch for `{input_id}`: supervisor expects {expected}, got {found}")]
    OrientationMismatch {
        input_id: String,
        expected: Orientation,
        found: Orientation,
    },
    #[error("quantifier {quantifier} is a {expected} quantifier, config says {found}")]
    QuantifierOrientation {
        quantifier: QuantifierId,
        expected: Orientation,
        found: Orientation,
    },
    #[error("achieved_fpr {0} outside [0, 1]")]
    InvalidAchievedFpr(f64),
}

impl SupervisorConfig {
    /// A hand-picked threshold with no calibration metadata.
    pub fn manual(quantifier: QuantifierId, threshold: f64) -> Self {
        Self {
            quantifier: Some(quantifier),
            threshold,
            orientation: quantifier.orientation(),
            epsilon: None,
            mode: None,
            achieved_fpr: None,
            calibration_size: 0,
            degenerate: false,
            warning: None,
        }
    }

    pub fn with_quantifier(mut self, quantifier: QuantifierId) -> Self {
        self.quantifier = Some(quantifier);
        self
    }

    /// Check the type invariants (used after deserialization).
    pub fn validate(&self) -> Result<(), SupervisorError> {
        if let Some(q) = self.quantifier {
            if q.orientation() != self.orientation {
                return Err(SupervisorError::QuantifierOrientation {
                    quantifier: q,
                    expected: q.orientation(),
                    found: self.orientation,
                });
            }
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(SupervisorError::InvalidEpsilon(eps));
            }
        }
        if let Some(fpr) = self.achieved_fpr {
            if !(0.0..=1.0).contains(&fpr) {
                return Err(SupervisorError::InvalidAchievedFpr(fpr));
            }
        }
        Ok(())
    }

    /// The decision rule: `u < t` for uncertainties, `c > t` for confidences.
    pub fn accepts(&self, score: f64) -> bool {
        match self.orientation {
            Orientation::Uncertainty => score < self.threshold,
            Orientation::Confidence => score > self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub input_id: String,
    pub accepted: bool,
    pub score: f64,
}

struct Candidate {
    threshold: f64,
    fpr: f64,
}

/// Every threshold the benign scores can distinguish, with its FPR, excluding
/// the reject-all one.
fn candidates(sorted: &[f64], orientation: Orientation) -> Vec<Candidate> {
    let n = sorted.len();
    let nf = n as f64;
    let mut out = Vec::new();
    match orientation {
        Orientation::Uncertainty => {
            out.push(Candidate {
                threshold: f64::INFINITY,
                fpr: 0.0,
            });
            // t = sorted[i] at the first occurrence of each value rejects
            // everything from index i on.
            for i in (1..n).rev() {
                if sorted[i] != sorted[i - 1] {
                    out.push(Candidate {
                        threshold: sorted[i],
                        fpr: (n - i) as f64 / nf,
                    });
                }
            }
        }
        Orientation::Confidence => {
            out.push(Candidate {
                threshold: f64::NEG_INFINITY,
                fpr: 0.0,
            });
            // t = sorted[i] at the last occurrence of each value rejects
            // everything up to and including index i.
            for i in 0..n - 1 {
                if sorted[i] != sorted[i + 1] {
                    out.push(Candidate {
                        threshold: sorted[i],
                        fpr: (i + 1) as f64 / nf,
                    });
                }
            }
        }
    }
    out
}

/// Calibrate a threshold on `(score, is_benign)` pairs. Only benign entries
/// are used.
pub fn calibrate_threshold(
    val_scores: &[(f64, bool)],
    epsilon: f64,
    orientation: Orientation,
    mode: CalibrationMode,
) -> Result<SupervisorConfig, SupervisorError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SupervisorError::InvalidEpsilon(epsilon));
    }
    if let Some((index, &(value, _))) = val_scores
        .iter()
        .enumerate()
        .find(|(_, (s, _))| !s.is_finite())
    {
        return Err(SupervisorError::NonFiniteScore { index, value });
    }
    let mut benign: Vec<f64> = val_scores
        .iter()
        .filter(|(_, is_benign)| *is_benign)
        .map(|(s, _)| *s)
        .collect();
    if benign.is_empty() {
        return Err(SupervisorError::NoBenignScores);
    }
    benign.sort_by(f64::total_cmp);

    // Candidates come out in increasing FPR order.
    let cands = candidates(&benign, orientation);
    let only_accept_all = cands.len() == 1;
    let (chosen, fell_back) = match mode {
        CalibrationMode::Above => match cands.iter().find(|c| c.fpr >= epsilon) {
            Some(c) => (c, false),
            None => (cands.last().expect("accept-all sentinel"), true),
        },
        CalibrationMode::AtMost => (
            cands
                .iter()
                .rev()
                .find(|c| c.fpr <= epsilon)
                .expect("accept-all sentinel has FPR 0"),
            false,
        ),
    };

    let degenerate = fell_back || only_accept_all;
    let warning = if only_accept_all {
        Some("all benign scores are identical; only the accept-all threshold is available".into())
    } else if fell_back {
        Some(format!(
            "no threshold reaches FPR >= {epsilon}; using the largest achievable FPR {}",
            chosen.fpr
        ))
    } else if (chosen.fpr - epsilon).abs() > epsilon / 2.0 {
        Some(format!(
            "achieved FPR {} is far from the target {epsilon}; the score takes few distinct values",
            chosen.fpr
        ))
    } else {
        None
    };

    Ok(SupervisorConfig {
        quantifier: None,
        threshold: chosen.threshold,
        orientation,
        epsilon: Some(epsilon),
        mode: Some(mode),
        achieved_fpr: Some(chosen.fpr),
        calibration_size: benign.len(),
        degenerate,
        warning,
    })
}

/// Accept or reject every prediction under `config`.
pub fn apply(
    config: &SupervisorConfig,
    predictions: &[QuantifiedPrediction],
) -> Result<Vec<Decision>, SupervisorError> {
    predictions
        .iter()
        .map(|q| {
            if q.orientation != config.orientation {
                return Err(SupervisorError::OrientationMismatch {
                    input_id: q.input_id.clone(),
                    expected: config.orientation,
                    found: q.orientation,
                });
            }
            Ok(Decision {
                input_id: q.input_id.clone(),
                accepted: config.accepts(q.score),
                score: q.score,
            })
        })
        .collect()
}

/// Share of benign entries the config rejects.
pub fn empirical_fpr(config: &SupervisorConfig, val_scores: &[(f64, bool)]) -> Option<f64> {
    let benign: Vec<f64> = val_scores
        .iter()
        .filter(|(_, b)| *b)
        .map(|(s, _)| *s)
        .collect();
    if benign.is_empty() {
        return None;
    }
    let rejected = benign.iter().filter(|s| !config.accepts(**s)).count();
    Some(rejected as f64 / benign.len() as f64)
}
