//! Supervising deep-learning predictions with uncertainty quantifiers.
//!
//! Records of sampled or point predictions are turned into scalar
//! uncertainty or confidence scores ([`quantifiers`]), a threshold is
//! calibrated on benign validation inputs ([`supervisor`]), and the resulting
//! accept/reject decisions are scored ([`metrics`]). [`analysis`] holds the
//! study-level comparisons built on top.

pub mod analysis;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod quantifiers;
pub mod records;
pub mod supervisor;
pub mod synth;

pub use metrics::{EvaluationOptions, EvaluationReport, MetricValue, ObjectiveSpec};
pub use quantifiers::{Orientation, QuantifiedPrediction, QuantifierId};
pub use records::{Dataset, PredictionRecord};
pub use supervisor::{CalibrationMode, SupervisorConfig};
