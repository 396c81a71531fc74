//! Uncertainty and confidence quantifiers.
//!
//! Each quantifier turns one [`PredictionRecord`] into a point prediction and a
//! scalar score. Point-predictor quantifiers (SM, PCS, SME) read a single
//! softmax vector; sample-based quantifiers (VR, PE, MI, MS) aggregate the
//! `T >= 2` samples of an MC-Dropout model or deep ensemble; PRED_VAR and
//! MEAN_VAR cover regression.
//!
//! Entropies use the natural logarithm with `0 ln 0 = 0`. Argmax and mode ties
//! resolve to the lowest class index.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{Dataset, Outputs, PredictionRecord, Task};

/// Whether a higher score means more or less trust in the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Uncertainty,
    Confidence,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Orientation::Uncertainty => f.write_str("uncertainty"),
            Orientation::Confidence => f.write_str("confidence"),
        }
    }
}

impl FromStr for Orientation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uncertainty" => Ok(Orientation::Uncertainty),
            "confidence" => Ok(Orientation::Confidence),
            other => Err(format!("unknown orientation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuantifierId {
    #[serde(rename = "SM")]
    MaxSoftmax,
    #[serde(rename = "PCS")]
    PredictionConfidenceScore,
    #[serde(rename = "SME")]
    SoftmaxEntropy,
    #[serde(rename = "VR")]
    VariationRatio,
    #[serde(rename = "PE")]
    PredictiveEntropy,
    #[serde(rename = "MI")]
    MutualInformation,
    #[serde(rename = "MS")]
    MeanSoftmax,
    #[serde(rename = "PRED_VAR")]
    PredictiveVariance,
    #[serde(rename = "MEAN_VAR")]
    MeanOfVariances,
}

/// Record shape a quantifier accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requirement {
    /// Classification with exactly one sample.
    PointClassification,
    /// Classification with at least two samples.
    SampledClassification,
    /// Regression with at least two samples.
    SampledRegression,
    /// Regression with at least two (mean, variance) samples.
    SampledRegressionWithVariance,
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Requirement::PointClassification => f.write_str("a classification record with T = 1"),
            Requirement::SampledClassification => {
                f.write_str("a classification record with T >= 2 samples")
            }
            Requirement::SampledRegression => f.write_str("a regression record with T >= 2 samples"),
            Requirement::SampledRegressionWithVariance => {
                f.write_str("a regression record with T >= 2 (mean, variance) samples")
            }
        }
    }
}

impl QuantifierId {
    pub const ALL: [QuantifierId; 9] = [
        QuantifierId::MaxSoftmax,
        QuantifierId::PredictionConfidenceScore,
        QuantifierId::SoftmaxEntropy,
        QuantifierId::VariationRatio,
        QuantifierId::PredictiveEntropy,
        QuantifierId::MutualInformation,
        QuantifierId::MeanSoftmax,
        QuantifierId::PredictiveVariance,
        QuantifierId::MeanOfVariances,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            QuantifierId::MaxSoftmax => "SM",
            QuantifierId::PredictionConfidenceScore => "PCS",
            QuantifierId::SoftmaxEntropy => "SME",
            QuantifierId::VariationRatio => "VR",
            QuantifierId::PredictiveEntropy => "PE",
            QuantifierId::MutualInformation => "MI",
            QuantifierId::MeanSoftmax => "MS",
            QuantifierId::PredictiveVariance => "PRED_VAR",
            QuantifierId::MeanOfVariances => "MEAN_VAR",
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            QuantifierId::MaxSoftmax
            | QuantifierId::PredictionConfidenceScore
            | QuantifierId::MeanSoftmax => Orientation::Confidence,
            _ => Orientation::Uncertainty,
        }
    }

    pub fn requirement(&self) -> Requirement {
        match self {
            QuantifierId::MaxSoftmax
            | QuantifierId::PredictionConfidenceScore
            | QuantifierId::SoftmaxEntropy => Requirement::PointClassification,
            QuantifierId::VariationRatio
            | QuantifierId::PredictiveEntropy
            | QuantifierId::MutualInformation
            | QuantifierId::MeanSoftmax => Requirement::SampledClassification,
            QuantifierId::PredictiveVariance => Requirement::SampledRegression,
            QuantifierId::MeanOfVariances => Requirement::SampledRegressionWithVariance,
        }
    }

    /// Whether `record` has the shape this quantifier needs.
    pub fn accepts(&self, record: &PredictionRecord) -> bool {
        check_shape(*self, record).is_ok()
    }

    /// Quantifiers whose preconditions `record` satisfies.
    pub fn applicable_to(record: &PredictionRecord) -> Vec<QuantifierId> {
        Self::ALL.into_iter().filter(|q| q.accepts(record)).collect()
    }
}

impl fmt::Display for QuantifierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for QuantifierId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|q| q.code() == upper)
            .ok_or_else(|| {
                format!("unknown quantifier `{s}` (expected one of SM, PCS, SME, VR, PE, MI, MS, PRED_VAR, MEAN_VAR)")
            })
    }
}

/// A point prediction: a class index or a real value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Class(usize),
    Value(f64),
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Class(c) => write!(f, "{c}"),
            Prediction::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantifiedPrediction {
    pub input_id: String,
    pub predicted: Prediction,
    pub score: f64,
    pub orientation: Orientation,
}

impl QuantifiedPrediction {
    /// Score mapped onto the uncertainty axis (confidences are negated).
    pub fn uncertainty(&self) -> f64 {
        match self.orientation {
            Orientation::Uncertainty => self.score,
            Orientation::Confidence => -self.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantifierError {
    #[error("{quantifier} requires {requirement}; record `{input_id}` {found}")]
    Precondition {
        quantifier: QuantifierId,
        requirement: Requirement,
        input_id: String,
        found: String,
    },
    #[error("{quantifier} produced a non-finite score for record `{input_id}`")]
    NonFiniteScore {
        quantifier: QuantifierId,
        input_id: String,
    },
}

impl QuantifierError {
    pub fn input_id(&self) -> &str {
        match self {
            QuantifierError::Precondition { input_id, .. }
            | QuantifierError::NonFiniteScore { input_id, .. } => input_id,
        }
    }
}

fn describe(record: &PredictionRecord) -> String {
    let t = record.outputs.len();
    match &record.outputs {
        Outputs::Classification(_) => format!("is a classification record with T = {t}"),
        Outputs::Regression(_) => format!("is a regression record with T = {t}"),
        Outputs::RegressionWithVariance(_) => {
            format!("is a regression record with variance channel and T = {t}")
        }
    }
}

fn check_shape(q: QuantifierId, record: &PredictionRecord) -> Result<(), QuantifierError> {
    let t = record.outputs.len();
    let ok = match q.requirement() {
        Requirement::PointClassification => {
            record.outputs.task() == Task::Classification && t == 1
        }
        Requirement::SampledClassification => {
            record.outputs.task() == Task::Classification && t >= 2
        }
        Requirement::SampledRegression => record.outputs.task() == Task::Regression && t >= 2,
        Requirement::SampledRegressionWithVariance => record.outputs.has_variance() && t >= 2,
    };
    if ok {
        Ok(())
    } else {
        Err(QuantifierError::Precondition {
            quantifier: q,
            requirement: q.requirement(),
            input_id: record.input_id.clone(),
            found: describe(record),
        })
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

fn class_samples(outputs: &Outputs) -> Vec<&[f64]> {
    match outputs {
        Outputs::Classification(s) => s.iter().map(|d| d.probs()).collect(),
        _ => Vec::new(),
    }
}

/// Per-class sums over all samples.
fn class_sums(samples: &[&[f64]]) -> Vec<f64> {
    let mut sums = vec![0.0; samples[0].len()];
    for sample in samples {
        for (acc, p) in sums.iter_mut().zip(sample.iter()) {
            *acc += p;
        }
    }
    sums
}

fn mean_distribution(samples: &[&[f64]]) -> Vec<f64> {
    let t = samples.len() as f64;
    class_sums(samples).into_iter().map(|s| s / t).collect()
}

fn finish(
    q: QuantifierId,
    record: &PredictionRecord,
    predicted: Prediction,
    score: f64,
) -> Result<QuantifiedPrediction, QuantifierError> {
    if !score.is_finite() {
        return Err(QuantifierError::NonFiniteScore {
            quantifier: q,
            input_id: record.input_id.clone(),
        });
    }
    Ok(QuantifiedPrediction {
        input_id: record.input_id.clone(),
        predicted,
        score,
        orientation: q.orientation(),
    })
}

/// Highest softmax value, used as confidence.
pub fn max_softmax(record: &PredictionRecord) -> Result<QuantifiedPrediction, QuantifierError> {
    quantify(record, QuantifierId::MaxSoftmax)
}

/// Gap between the two highest softmax values.
pub fn pcs(record: &PredictionRecord) -> Result<QuantifiedPrediction, QuantifierError> {
    quantify(record, QuantifierId::PredictionConfidenceScore)
}

pub fn softmax_entropy(record: &PredictionRecord) -> Result<QuantifiedPrediction, QuantifierError> {
    quantify(record, QuantifierId::SoftmaxEntropy)
}

/// Share of samples whose argmax disagrees with the modal class.
pub fn variation_ratio(record: &PredictionRecord) -> Result<QuantifiedPrediction, QuantifierError> {
    quantify(record, QuantifierId::VariationRatio)
}

/// Entropy of the mean sampled distribution.
pub fn predictive_entropy(
    record: &PredictionRecord,
) -> Result<QuantifiedPrediction, QuantifierError> {
    quantify(record, QuantifierId::PredictiveEntropy)
}

/// Predictive entropy minus the mean per-sample entropy.
pub fn mutual_information(
    record: &PredictionRecord,
) -> Result<QuantifiedPrediction, QuantifierError> {
    quantify(record, QuantifierId::MutualInformation)
}

/// Class with the highest softmax sum and its average softmax value.
pub fn mean_softmax(record: &PredictionRecord) -> Result<QuantifiedPrediction, QuantifierError> {
    quantify(record, QuantifierId::MeanSoftmax)
}

/// Sample mean and unbiased sample variance of scalar regression outputs.
///
/// The inverse model precision is a constant shift and is left out; it does
/// not change any supervisor decision.
pub fn predictive_variance(
    record: &PredictionRecord,
) -> Result<QuantifiedPrediction, QuantifierError> {
    quantify(record, QuantifierId::PredictiveVariance)
}

/// Mean of the per-sample means and mean of the per-sample variances.
pub fn mean_variance(record: &PredictionRecord) -> Result<QuantifiedPrediction, QuantifierError> {
    quantify(record, QuantifierId::MeanOfVariances)
}

/// Apply quantifier `q` to one record.
pub fn quantify(
    record: &PredictionRecord,
    q: QuantifierId,
) -> Result<QuantifiedPrediction, QuantifierError> {
    check_shape(q, record)?;
    let samples = class_samples(&record.outputs);
    match q {
        QuantifierId::MaxSoftmax => {
            let probs = samples[0];
            let top = argmax(probs);
            finish(q, record, Prediction::Class(top), probs[top])
        }
        QuantifierId::PredictionConfidenceScore => {
            let probs = samples[0];
            let top = argmax(probs);
            let runner_up = probs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != top)
                .map(|(_, p)| *p)
                .fold(f64::NEG_INFINITY, f64::max);
            finish(q, record, Prediction::Class(top), probs[top] - runner_up)
        }
        QuantifierId::SoftmaxEntropy => {
            let probs = samples[0];
            finish(q, record, Prediction::Class(argmax(probs)), entropy(probs))
        }
        QuantifierId::VariationRatio => {
            let mut votes = vec![0usize; samples[0].len()];
            for sample in &samples {
                votes[argmax(sample)] += 1;
            }
            let mut mode = 0;
            for (c, n) in votes.iter().enumerate() {
                if *n > votes[mode] {
                    mode = c;
                }
            }
            let score = 1.0 - votes[mode] as f64 / samples.len() as f64;
            finish(q, record, Prediction::Class(mode), score)
        }
        QuantifierId::PredictiveEntropy => {
            let mean = mean_distribution(&samples);
            finish(q, record, Prediction::Class(argmax(&mean)), entropy(&mean))
        }
        QuantifierId::MutualInformation => {
            let mean = mean_distribution(&samples);
            let expected_entropy =
                samples.iter().map(|s| entropy(s)).sum::<f64>() / samples.len() as f64;
            // Rounding can leave the difference a few ulps below zero.
            let score = (entropy(&mean) - expected_entropy).max(0.0);
            finish(q, record, Prediction::Class(argmax(&mean)), score)
        }
        QuantifierId::MeanSoftmax => {
            let sums = class_sums(&samples);
            let top = argmax(&sums);
            finish(q, record, Prediction::Class(top), sums[top] / samples.len() as f64)
        }
        QuantifierId::PredictiveVariance => {
            let values: Vec<f64> = match &record.outputs {
                Outputs::Regression(v) => v.clone(),
                Outputs::RegressionWithVariance(p) => p.iter().map(|mv| mv.mean).collect(),
                Outputs::Classification(_) => unreachable!("shape checked above"),
            };
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            finish(q, record, Prediction::Value(mean), var)
        }
        QuantifierId::MeanOfVariances => {
            let Outputs::RegressionWithVariance(pairs) = &record.outputs else {
                unreachable!("shape checked above")
            };
            let n = pairs.len() as f64;
            let mean = pairs.iter().map(|mv| mv.mean).sum::<f64>() / n;
            let var = pairs.iter().map(|mv| mv.variance).sum::<f64>() / n;
            finish(q, record, Prediction::Value(mean), var)
        }
    }
}

/// Quantify every record of `dataset`, preserving record order. Fails on the
/// first record (in dataset order) that violates `q`'s preconditions.
pub fn quantify_dataset(
    dataset: &Dataset,
    q: QuantifierId,
) -> Result<Vec<QuantifiedPrediction>, QuantifierError> {
    let results: Vec<_> = dataset
        .records
        .par_iter()
        .map(|record| quantify(record, q))
        .collect();
    results.into_iter().collect()
}
