//! Metrics for a model under supervision.
//!
//! Supervised metrics evaluate the model only on the inputs the supervisor
//! accepts and combine that with the acceptance rate into the S_β score.
//! Classical metrics treat the supervisor as a binary classifier whose
//! positives are malicious inputs (misclassifications, or regression errors
//! beyond an acceptable imprecision).
//!
//! Rates with an empty denominator are reported as [`MetricValue::Undefined`]
//! and never as NaN.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::RunManifest;
use crate::quantifiers::{Prediction, QuantifiedPrediction, QuantifierId};
use crate::records::{Dataset, GroundTruth};
use crate::supervisor::{CalibrationMode, Decision};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("undefined, no accepted inputs")]
    NoAcceptedInputs,
    #[error("no decisions")]
    NoDecisions,
    #[error("no labeled records")]
    NoLabeledRecords,
    #[error("accepted record `{0}` has no ground truth")]
    MissingGroundTruth(String),
    #[error("prediction for `{0}` does not match its ground-truth kind")]
    LabelKindMismatch(String),
    #[error("beta must be a positive finite number, got {0}")]
    InvalidBeta(f64),
    #[error("acceptance rate must lie in [0, 1], got {0}")]
    InvalidAcceptanceRate(f64),
    #[error("objective bounds must satisfy lower < upper, got [{0}, {1}]")]
    InvalidBounds(f64, f64),
    #[error("accuracy objective requires bounds [0, 1] and maximize direction")]
    InvalidAccuracySpec,
    #[error("custom objective `{0}` must be computed by the caller")]
    CustomObjective(String),
    #[error("need both malicious and benign inputs")]
    SingleClass,
    #[error("need at least one malicious input")]
    NoPositives,
    #[error("non-finite score at position {0}")]
    NonFiniteScore(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 paired values, got {0}")]
    TooFewValues(usize),
    #[error("undefined correlation: zero variance")]
    ZeroVariance,
    #[error("input ids out of step at position {position}: `{left}` vs `{right}`")]
    IdMismatch {
        position: usize,
        left: String,
        right: String,
    },
}

/// A metric value, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Defined(f64),
    Undefined { undefined: String },
}

impl MetricValue {
    pub fn undefined(reason: impl Into<String>) -> Self {
        MetricValue::Undefined {
            undefined: reason.into(),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(*v),
            MetricValue::Undefined { .. } => None,
        }
    }

    /// `decimals` places, or `n.a.` when undefined.
    pub fn format(&self, decimals: usize) -> String {
        match self {
            MetricValue::Defined(v) => format!("{v:.decimals$}"),
            MetricValue::Undefined { .. } => "n.a.".into(),
        }
    }
}

impl<E: fmt::Display> From<Result<f64, E>> for MetricValue {
    fn from(r: Result<f64, E>) -> Self {
        match r {
            Ok(v) => MetricValue::Defined(v),
            Err(e) => MetricValue::undefined(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Accuracy,
    MeanSquaredError,
    Custom(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

/// An objective function with the bounds used to normalize it onto [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub lower: f64,
    pub upper: f64,
    pub direction: Direction,
}

impl ObjectiveSpec {
    pub fn accuracy() -> Self {
        Self {
            kind: ObjectiveKind::Accuracy,
            lower: 0.0,
            upper: 1.0,
            direction: Direction::Maximize,
        }
    }

    /// MSE with empirically estimated bounds; lower is better.
    pub fn mean_squared_error(lower: f64, upper: f64) -> Self {
        Self {
            kind: ObjectiveKind::MeanSquaredError,
            lower,
            upper,
            direction: Direction::Minimize,
        }
    }

    pub fn custom(name: impl Into<String>, lower: f64, upper: f64, direction: Direction) -> Self {
        Self {
            kind: ObjectiveKind::Custom(name.into()),
            lower,
            upper,
            direction,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.lower < self.upper) || !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(MetricsError::InvalidBounds(self.lower, self.upper));
        }
        if self.kind == ObjectiveKind::Accuracy
            && (self.lower != 0.0 || self.upper != 1.0 || self.direction != Direction::Maximize)
        {
            return Err(MetricsError::InvalidAccuracySpec);
        }
        Ok(())
    }

    /// Objective value mapped to [0, 1], where 1 is best.
    pub fn normalize(&self, value: f64) -> f64 {
        let nu = ((value - self.lower) / (self.upper - self.lower)).clamp(0.0, 1.0);
        match self.direction {
            Direction::Maximize => nu,
            Direction::Minimize => 1.0 - nu,
        }
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            ObjectiveKind::Accuracy => "accuracy",
            ObjectiveKind::MeanSquaredError => "mse",
            ObjectiveKind::Custom(name) => name,
        }
    }
}

/// One input seen through the supervisor: its decision, prediction and label.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedCase {
    pub input_id: String,
    pub accepted: bool,
    /// Score on the uncertainty axis (confidences negated).
    pub uncertainty: f64,
    pub predicted: Prediction,
    pub truth: Option<GroundTruth>,
}

/// Zip predictions, decisions and records, which must list the same inputs in
/// the same order.
pub fn align_cases(
    predictions: &[QuantifiedPrediction],
    decisions: &[Decision],
    dataset: &Dataset,
) -> Result<Vec<SupervisedCase>, MetricsError> {
    if predictions.len() != decisions.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), decisions.len()));
    }
    if predictions.len() != dataset.records.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), dataset.records.len()));
    }
    predictions
        .iter()
        .zip(decisions)
        .zip(&dataset.records)
        .enumerate()
        .map(|(position, ((q, d), r))| {
            for other in [&d.input_id, &r.input_id] {
                if *other != q.input_id {
                    return Err(MetricsError::IdMismatch {
                        position,
                        left: q.input_id.clone(),
                        right: other.clone(),
                    });
                }
            }
            Ok(SupervisedCase {
                input_id: q.input_id.clone(),
                accepted: d.accepted,
                uncertainty: q.uncertainty(),
                predicted: q.predicted,
                truth: r.ground_truth,
            })
        })
        .collect()
}

/// How malicious (positive) inputs are told apart from benign ones.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum MaliciousRule {
    /// Predicted value differs from the ground truth.
    #[default]
    Misclassification,
    /// Absolute regression error strictly above the given imprecision.
    Imprecision(f64),
    /// Caller-supplied labels by input id (`true` = malicious).
    Provided(HashMap<String, bool>),
}

impl MaliciousRule {
    /// `None` when the case carries no label under this rule.
    pub fn is_malicious(&self, case: &SupervisedCase) -> Option<bool> {
        match self {
            MaliciousRule::Provided(labels) => labels.get(&case.input_id).copied(),
            MaliciousRule::Misclassification => {
                let truth = case.truth?;
                Some(match (case.predicted, truth) {
                    (Prediction::Class(p), GroundTruth::Class(t)) => p != t,
                    (p, t) => prediction_value(p) != truth_value(t),
                })
            }
            MaliciousRule::Imprecision(tolerance) => {
                let truth = case.truth?;
                Some((prediction_value(case.predicted) - truth_value(truth)).abs() > *tolerance)
            }
        }
    }
}

fn prediction_value(p: Prediction) -> f64 {
    match p {
        Prediction::Class(c) => c as f64,
        Prediction::Value(v) => v,
    }
}

fn truth_value(t: GroundTruth) -> f64 {
    match t {
        GroundTruth::Class(c) => c as f64,
        GroundTruth::Value(v) => v,
    }
}

fn objective_over(cases: &[&SupervisedCase], obj: &ObjectiveSpec) -> Result<f64, MetricsError> {
    let mut labeled = Vec::with_capacity(cases.len());
    for case in cases {
        match case.truth {
            Some(t) => labeled.push((case, t)),
            None => return Err(MetricsError::MissingGroundTruth(case.input_id.clone())),
        }
    }
    let n = labeled.len() as f64;
    match &obj.kind {
        ObjectiveKind::Accuracy => {
            let mut correct = 0usize;
            for (case, truth) in &labeled {
                match (case.predicted, truth) {
                    (Prediction::Class(p), GroundTruth::Class(t)) => correct += usize::from(p == *t),
                    _ => return Err(MetricsError::LabelKindMismatch(case.input_id.clone())),
                }
            }
            Ok(correct as f64 / n)
        }
        ObjectiveKind::MeanSquaredError => Ok(labeled
            .iter()
            .map(|(case, truth)| (prediction_value(case.predicted) - truth_value(*truth)).powi(2))
            .sum::<f64>()
            / n),
        ObjectiveKind::Custom(name) => Err(MetricsError::CustomObjective(name.clone())),
    }
}

/// Objective over the accepted inputs only.
pub fn supervised_objective(
    cases: &[SupervisedCase],
    obj: &ObjectiveSpec,
) -> Result<f64, MetricsError> {
    let accepted: Vec<&SupervisedCase> = cases.iter().filter(|c| c.accepted).collect();
    if accepted.is_empty() {
        return Err(MetricsError::NoAcceptedInputs);
    }
    objective_over(&accepted, obj)
}

/// Supervised objective for a caller-defined objective function.
pub fn supervised_objective_with<F>(cases: &[SupervisedCase], objective: F) -> Result<f64, MetricsError>
where
    F: Fn(&[&SupervisedCase]) -> f64,
{
    let accepted: Vec<&SupervisedCase> = cases.iter().filter(|c| c.accepted).collect();
    if accepted.is_empty() {
        return Err(MetricsError::NoAcceptedInputs);
    }
    Ok(objective(&accepted))
}

/// Objective over every input, ignoring the supervisor.
pub fn unsupervised_objective(
    cases: &[SupervisedCase],
    obj: &ObjectiveSpec,
) -> Result<f64, MetricsError> {
    if cases.is_empty() {
        return Err(MetricsError::NoLabeledRecords);
    }
    let all: Vec<&SupervisedCase> = cases.iter().collect();
    objective_over(&all, obj)
}

pub fn acceptance_rate(decisions: &[Decision]) -> Result<f64, MetricsError> {
    if decisions.is_empty() {
        return Err(MetricsError::NoDecisions);
    }
    let accepted = decisions.iter().filter(|d| d.accepted).count();
    Ok(accepted as f64 / decisions.len() as f64)
}

/// Weighted harmonic mean of the normalized supervised objective and the
/// acceptance rate. `beta = 1` weighs both equally.
pub fn s_score(
    supervised: f64,
    acceptance: f64,
    obj: &ObjectiveSpec,
    beta: f64,
) -> Result<f64, MetricsError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(MetricsError::InvalidBeta(beta));
    }
    if !(0.0..=1.0).contains(&acceptance) {
        return Err(MetricsError::InvalidAcceptanceRate(acceptance));
    }
    let nu = obj.normalize(supervised);
    let b2 = beta * beta;
    let denom = b2 * nu + acceptance;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + b2) * nu * acceptance / denom)
}

/// Confusion-matrix metrics of the supervisor as a detector of malicious
/// inputs. A rejection is a positive prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub tpr: MetricValue,
    pub fpr: MetricValue,
    pub tnr: MetricValue,
    pub fnr: MetricValue,
    pub precision: MetricValue,
    pub f1: f64,
    pub accuracy: f64,
}

fn rate_pair(num: usize, denom: usize, reason: &str) -> (MetricValue, MetricValue) {
    if denom == 0 {
        return (MetricValue::undefined(reason), MetricValue::undefined(reason));
    }
    let rate = num as f64 / denom as f64;
    (MetricValue::Defined(rate), MetricValue::Defined(1.0 - rate))
}

pub fn binary_supervisor_metrics(
    cases: &[SupervisedCase],
    rule: &MaliciousRule,
) -> Result<BinaryMetrics, MetricsError> {
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for case in cases {
        let Some(malicious) = rule.is_malicious(case) else {
            continue;
        };
        match (malicious, case.accepted) {
            (true, false) => tp += 1,
            (true, true) => fneg += 1,
            (false, false) => fp += 1,
            (false, true) => tn += 1,
        }
    }
    let total = tp + fp + tn + fneg;
    if total == 0 {
        return Err(MetricsError::NoLabeledRecords);
    }
    let (tpr, fnr) = rate_pair(tp, tp + fneg, "no malicious inputs");
    let (fpr, tnr) = rate_pair(fp, fp + tn, "no benign inputs");
    let precision = if tp + fp == 0 {
        MetricValue::undefined("no rejected inputs")
    } else {
        MetricValue::Defined(tp as f64 / (tp + fp) as f64)
    };
    let f1 = match (precision.value(), tpr.value()) {
        (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
        _ => 0.0,
    };
    Ok(BinaryMetrics {
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fneg,
        tpr,
        fpr,
        tnr,
        fnr,
        precision,
        f1,
        accuracy: (tp + tn) as f64 / total as f64,
    })
}

fn check_finite(scores: &[(f64, bool)]) -> Result<(), MetricsError> {
    match scores.iter().position(|(s, _)| !s.is_finite()) {
        Some(i) => Err(MetricsError::NonFiniteScore(i)),
        None => Ok(()),
    }
}

/// Area under the ROC curve for `(uncertainty, is_malicious)` pairs, via the
/// Mann-Whitney rank sum with mid-ranks for ties.
pub fn auroc(scores: &[(f64, bool)]) -> Result<f64, MetricsError> {
    check_finite(scores)?;
    let positives = scores.iter().filter(|(_, m)| *m).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let tied_positives = sorted[i..=j].iter().filter(|(_, m)| *m).count();
        rank_sum += mid_rank * tied_positives as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Average precision: precision at each distinct threshold weighted by the
/// recall gained there, sweeping thresholds from the highest uncertainty
/// down.
pub fn avgpr(scores: &[(f64, bool)]) -> Result<f64, MetricsError> {
    check_finite(scores)?;
    let positives = scores.iter().filter(|(_, m)| *m).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation, `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Point-biserial correlation between prediction errors and uncertainties.
///
/// With 0/1 errors this is the classical point-biserial coefficient; with
/// continuous errors it is the Pearson correlation.
pub fn point_biserial(errors: &[f64], uncertainties: &[f64]) -> Result<f64, MetricsError> {
    if errors.len() != uncertainties.len() {
        return Err(MetricsError::LengthMismatch(errors.len(), uncertainties.len()));
    }
    if errors.len() < 3 {
        return Err(MetricsError::TooFewValues(errors.len()));
    }
    if let Some(i) = errors
        .iter()
        .chain(uncertainties)
        .position(|v| !v.is_finite())
    {
        return Err(MetricsError::NonFiniteScore(i % errors.len()));
    }
    let binary = errors.iter().all(|e| *e == 0.0 || *e == 1.0);
    if !binary {
        return pearson(errors, uncertainties).ok_or(MetricsError::ZeroVariance);
    }
    let ones: Vec<f64> = errors
        .iter()
        .zip(uncertainties)
        .filter(|(e, _)| **e == 1.0)
        .map(|(_, u)| *u)
        .collect();
    let zeros: Vec<f64> = errors
        .iter()
        .zip(uncertainties)
        .filter(|(e, _)| **e == 0.0)
        .map(|(_, u)| *u)
        .collect();
    if ones.is_empty() || zeros.is_empty() {
        return Err(MetricsError::ZeroVariance);
    }
    let m = mean(uncertainties);
    let s = (uncertainties.iter().map(|u| (u - m).powi(2)).sum::<f64>()
        / uncertainties.len() as f64)
        .sqrt();
    if s == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let n = errors.len() as f64;
    let p = ones.len() as f64 / n;
    let q = zeros.len() as f64 / n;
    Ok(((mean(&ones) - mean(&zeros)) / s * (p * q).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SBeta {
    pub beta: f64,
    pub value: MetricValue,
}

/// Everything known about one (model, quantifier, threshold) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantifier: Option<QuantifierId>,
    #[serde(default, with = "crate::io::opt_float_or_infinity")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<CalibrationMode>,
    pub objective: ObjectiveSpec,
    /// Objective over every labeled input (ACC for classifiers).
    pub unsupervised_objective: MetricValue,
    /// Objective over the accepted labeled inputs.
    pub supervised_objective: MetricValue,
    pub acceptance_rate: MetricValue,
    pub s_beta: Vec<SBeta>,
    pub binary: Result<BinaryMetrics, String>,
    pub auroc: MetricValue,
    pub avgpr: MetricValue,
    pub n_accepted: usize,
    pub n_rejected: usize,
    pub n_unlabeled_excluded: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<RunManifest>,
}

/// Options for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvaluationOptions {
    pub objective: ObjectiveSpec,
    pub betas: Vec<f64>,
    pub rule: MaliciousRule,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            objective: ObjectiveSpec::accuracy(),
            betas: vec![1.0],
            rule: MaliciousRule::Misclassification,
        }
    }
}

/// Compute every supervised and classical metric for `cases`.
///
/// Unlabeled cases count towards the acceptance rate but are left out of
/// every metric that needs ground truth. S_β is 0 when nothing is accepted.
pub fn evaluate(cases: &[SupervisedCase], options: &EvaluationOptions) -> EvaluationReport {
    let n_accepted = cases.iter().filter(|c| c.accepted).count();
    let n_rejected = cases.len() - n_accepted;
    let acceptance = if cases.is_empty() {
        MetricValue::undefined(MetricsError::NoDecisions.to_string())
    } else {
        MetricValue::Defined(n_accepted as f64 / cases.len() as f64)
    };

    let labeled: Vec<SupervisedCase> = cases
        .iter()
        .filter(|c| options.rule.is_malicious(c).is_some() && c.truth.is_some())
        .cloned()
        .collect();
    let n_unlabeled_excluded = cases.len() - labeled.len();

    let unsupervised = MetricValue::from(unsupervised_objective(&labeled, &options.objective));
    let supervised = MetricValue::from(supervised_objective(&labeled, &options.objective));

    let s_beta = options
        .betas
        .iter()
        .map(|&beta| {
            let value = match (supervised.value(), acceptance.value()) {
                (_, Some(delta)) if delta == 0.0 => {
                    if beta > 0.0 && beta.is_finite() {
                        MetricValue::Defined(0.0)
                    } else {
                        MetricValue::undefined(MetricsError::InvalidBeta(beta).to_string())
                    }
                }
                (Some(obj), Some(delta)) => s_score(obj, delta, &options.objective, beta).into(),
                (None, _) => supervised.clone(),
                (_, None) => acceptance.clone(),
            };
            SBeta { beta, value }
        })
        .collect();

    let pairs: Vec<(f64, bool)> = labeled
        .iter()
        .map(|c| (c.uncertainty, options.rule.is_malicious(c).unwrap_or(false)))
        .collect();

    EvaluationReport {
        quantifier: None,
        threshold: None,
        epsilon: None,
        mode: None,
        objective: options.objective.clone(),
        unsupervised_objective: unsupervised,
        supervised_objective: supervised,
        acceptance_rate: acceptance,
        s_beta,
        binary: binary_supervisor_metrics(&labeled, &options.rule).map_err(|e| e.to_string()),
        auroc: auroc(&pairs).into(),
        avgpr: avgpr(&pairs).into(),
        n_accepted,
        n_rejected,
        n_unlabeled_excluded,
        metadata: BTreeMap::new(),
        manifest: None,
    }
}

impl EvaluationReport {
    /// S_β for the given β, if it was requested.
    pub fn s_beta(&self, beta: f64) -> Option<&MetricValue> {
        self.s_beta.iter().find(|s| s.beta == beta).map(|s| &s.value)
    }

    pub fn s1(&self) -> Option<f64> {
        self.s_beta(1.0).and_then(MetricValue::value)
    }

    /// `ACC | ACC̄ | Δ_u | S₁` header for [`Self::table_row`].
    pub fn table_header() -> &'static str {
        "ACC | ACC\u{0304} | \u{0394}_u | S\u{2081}"
    }

    /// The unsupervised objective, supervised objective, acceptance rate and
    /// S₁, formatted with `decimals` places.
    pub fn table_row(&self, decimals: usize) -> String {
        let s1 = self
            .s_beta(1.0)
            .cloned()
            .unwrap_or_else(|| MetricValue::undefined("beta 1 not requested"));
        format!(
            "{} | {} | {} | {}",
            self.unsupervised_objective.format(decimals),
            self.supervised_objective.format(decimals),
            self.acceptance_rate.format(decimals),
            s1.format(decimals)
        )
    }
}

/// Plain-text table with one row per quantifier: the unsupervised objective
/// followed by an `S-C | ACC̄ | Δ_u | S₁` block per epsilon. S-C is read from
/// the `s_c` metadata entry when present.
pub fn supervision_table(reports: &[EvaluationReport], decimals: usize) -> String {
    let mut epsilons: Vec<f64> = reports.iter().filter_map(|r| r.epsilon).collect();
    epsilons.sort_by(f64::total_cmp);
    epsilons.dedup();

    let row_key = |r: &EvaluationReport| {
        let tag = r.metadata.get("model_type").cloned().unwrap_or_default();
        let q = r.quantifier.map(|q| q.code().to_string()).unwrap_or_else(|| "-".into());
        (tag, q)
    };
    let mut rows: Vec<(String, String)> = reports.iter().map(row_key).collect();
    rows.sort();
    rows.dedup();

    let mut out = String::from("technique | quantifier | ACC");
    for eps in &epsilons {
        out.push_str(&format!(" || eps={eps}: S-C | ACC\u{0304} | \u{0394}_u | S\u{2081}"));
    }
    out.push('\n');
    for key in rows {
        let mine: Vec<&EvaluationReport> = reports.iter().filter(|r| row_key(r) == key).collect();
        let acc = mine
            .first()
            .map(|r| r.unsupervised_objective.format(decimals))
            .unwrap_or_else(|| "n.a.".into());
        out.push_str(&format!("{} | {} | {}", key.0, key.1, acc));
        for eps in &epsilons {
            match mine.iter().find(|r| r.epsilon == Some(*eps)) {
                Some(r) => {
                    let sc = r
                        .metadata
                        .get("s_c")
                        .and_then(|v| v.parse::<f64>().ok())
                        .map(|v| format!("{v:.decimals$}"))
                        .unwrap_or_else(|| "n.a.".into());
                    let s1 = r
                        .s_beta(1.0)
                        .map(|m| m.format(decimals))
                        .unwrap_or_else(|| "n.a.".into());
                    out.push_str(&format!(
                        " || {sc} | {} | {} | {s1}",
                        r.supervised_objective.format(decimals),
                        r.acceptance_rate.format(decimals)
                    ));
                }
                None => out.push_str(" || n.a. | n.a. | n.a. | n.a."),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: usize, accepted: bool, pred: usize, truth: usize) -> SupervisedCase {
        SupervisedCase {
            input_id: format!("i{id}"),
            accepted,
            uncertainty: 0.0,
            predicted: Prediction::Class(pred),
            truth: Some(GroundTruth::Class(truth)),
        }
    }

    fn decision(accepted: bool) -> Decision {
        Decision {
            input_id: String::new(),
            accepted,
            score: 0.0,
        }
    }

    #[test]
    fn supervised_accuracy() {
        let cases = vec![
            case(0, true, 0, 0),
            case(1, true, 1, 1),
            case(2, true, 1, 1),
            case(3, true, 0, 1),
            case(4, false, 0, 1),
        ];
        let acc = supervised_objective(&cases, &ObjectiveSpec::accuracy()).unwrap();
        assert_eq!(acc, 0.75);
    }

    #[test]
    fn supervised_objective_needs_accepted_inputs() {
        let cases = vec![case(0, false, 0, 0), case(1, false, 0, 1)];
        let err = supervised_objective(&cases, &ObjectiveSpec::accuracy()).unwrap_err();
        assert_eq!(err, MetricsError::NoAcceptedInputs);
        assert!(err.to_string().contains("no accepted inputs"));
    }

    #[test]
    fn supervised_mse() {
        let reg = |id: &str, pred: f64, truth: f64, accepted| SupervisedCase {
            input_id: id.into(),
            accepted,
            uncertainty: 0.0,
            predicted: Prediction::Value(pred),
            truth: Some(GroundTruth::Value(truth)),
        };
        let cases = vec![reg("a", 1.0, 1.0, true), reg("b", 3.0, 1.0, true), reg("c", 9.0, 0.0, false)];
        let obj = ObjectiveSpec::mean_squared_error(0.0, 10.0);
        assert_eq!(supervised_objective(&cases, &obj).unwrap(), 2.0);
    }

    #[test]
    fn acceptance_rate_examples() {
        let d = |v: &[bool]| v.iter().map(|a| decision(*a)).collect::<Vec<_>>();
        assert_eq!(acceptance_rate(&d(&[true, true, false, false])).unwrap(), 0.5);
        assert_eq!(acceptance_rate(&d(&[true, true])).unwrap(), 1.0);
        assert_eq!(acceptance_rate(&d(&[false])).unwrap(), 0.0);
        assert_eq!(acceptance_rate(&[]), Err(MetricsError::NoDecisions));
    }

    #[test]
    fn s_score_examples() {
        let acc = ObjectiveSpec::accuracy();
        let s = s_score(0.90, 0.80, &acc, 1.0).unwrap();
        assert!((s - 2.0 / (1.0 / 0.9 + 1.0 / 0.8)).abs() < 1e-15);
        assert_eq!(format!("{s:.2}"), "0.85");
        let s = s_score(0.97, 0.99, &acc, 1.0).unwrap();
        assert_eq!(format!("{s:.2}"), "0.98");
        for beta in [0.25, 1.0, 2.0, 7.5] {
            assert!((s_score(0.6, 0.6, &acc, beta).unwrap() - 0.6).abs() < 1e-15);
        }
        assert_eq!(s_score(0.0, 0.0, &acc, 1.0).unwrap(), 0.0);
        assert_eq!(s_score(0.5, 0.5, &acc, 0.0), Err(MetricsError::InvalidBeta(0.0)));
        assert_eq!(s_score(0.5, 0.5, &acc, -1.0), Err(MetricsError::InvalidBeta(-1.0)));
    }

    #[test]
    fn s_score_minimize_objective() {
        let mse = ObjectiveSpec::mean_squared_error(0.0, 4.0);
        // nu = 1 - 1/4
        let s = s_score(1.0, 0.75, &mse, 1.0).unwrap();
        assert!((s - 0.75).abs() < 1e-15);
    }

    #[test]
    fn binary_metrics_examples() {
        // 2 malicious both rejected, 8 benign accepted
        let mut cases: Vec<_> = (0..2).map(|i| case(i, false, 0, 1)).collect();
        cases.extend((2..10).map(|i| case(i, true, 0, 0)));
        let m = binary_supervisor_metrics(&cases, &MaliciousRule::Misclassification).unwrap();
        assert_eq!(m.tpr, MetricValue::Defined(1.0));
        assert_eq!(m.fpr, MetricValue::Defined(0.0));
        assert_eq!((m.f1, m.accuracy), (1.0, 1.0));

        let accept_all: Vec<_> = cases.iter().map(|c| SupervisedCase { accepted: true, ..c.clone() }).collect();
        let m = binary_supervisor_metrics(&accept_all, &MaliciousRule::Misclassification).unwrap();
        assert_eq!(m.tpr, MetricValue::Defined(0.0));
        assert_eq!(m.fpr, MetricValue::Defined(0.0));
        assert_eq!(m.fnr, MetricValue::Defined(1.0));
        assert_eq!(m.f1, 0.0);
        assert!(m.precision.value().is_none());

        // tp=1, fp=1, tn=8, fn=1
        let mut cases = vec![case(0, false, 0, 1), case(1, false, 0, 0), case(2, true, 0, 1)];
        cases.extend((3..11).map(|i| case(i, true, 0, 0)));
        let m = binary_supervisor_metrics(&cases, &MaliciousRule::Misclassification).unwrap();
        assert_eq!(m.tpr, MetricValue::Defined(0.5));
        assert_eq!(m.fpr.value().unwrap(), 1.0 / 9.0);
        assert_eq!(m.precision, MetricValue::Defined(0.5));
        assert!((m.f1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn binary_metrics_need_labels() {
        let mut c = case(0, true, 0, 0);
        c.truth = None;
        assert_eq!(
            binary_supervisor_metrics(&[c], &MaliciousRule::Misclassification),
            Err(MetricsError::NoLabeledRecords)
        );
    }

    #[test]
    fn imprecision_rule() {
        let c = SupervisedCase {
            input_id: "r".into(),
            accepted: true,
            uncertainty: 0.0,
            predicted: Prediction::Value(1.5),
            truth: Some(GroundTruth::Value(1.0)),
        };
        assert_eq!(MaliciousRule::Imprecision(1.0).is_malicious(&c), Some(false));
        assert_eq!(MaliciousRule::Imprecision(0.25).is_malicious(&c), Some(true));
    }

    #[test]
    fn auroc_examples() {
        let sep = [(0.1, false), (0.2, false), (0.8, true), (0.9, true)];
        assert_eq!(auroc(&sep).unwrap(), 1.0);
        let tied = [(0.5, false), (0.5, true), (0.5, false)];
        assert_eq!(auroc(&tied).unwrap(), 0.5);
        let mixed = [(0.1, false), (0.4, false), (0.3, true), (0.8, true)];
        assert_eq!(auroc(&mixed).unwrap(), 0.75);
        assert_eq!(auroc(&[(0.1, true)]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn avgpr_examples() {
        let perfect = [(0.9, true), (0.8, true), (0.1, false), (0.2, false)];
        assert_eq!(avgpr(&perfect).unwrap(), 1.0);
        let last = [(0.9, false), (0.8, false), (0.7, false), (0.1, true)];
        assert_eq!(avgpr(&last).unwrap(), 0.25);
        let mixed = [(0.1, false), (0.4, false), (0.3, true), (0.8, true)];
        assert!((avgpr(&mixed).unwrap() - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-15);
        assert_eq!(avgpr(&[(0.1, false)]), Err(MetricsError::NoPositives));
    }

    #[test]
    fn point_biserial_examples() {
        let errs = [0.0, 1.0, 0.0, 1.0, 1.0];
        assert!((point_biserial(&errs, &errs).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            point_biserial(&errs, &[0.3; 5]),
            Err(MetricsError::ZeroVariance)
        );
        // (3.5 - 1.5) / sqrt(1.25) * sqrt(0.25)
        let r = point_biserial(&[0.0, 0.0, 1.0, 1.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 0.894427191).abs() < 1e-9);
        assert!((r - pearson(&[0.0, 0.0, 1.0, 1.0], &[1.0, 2.0, 3.0, 4.0]).unwrap()).abs() < 1e-12);
        // continuous errors fall back to Pearson
        let r = point_biserial(&[0.5, 1.0, 2.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(point_biserial(&[0.0, 1.0], &[0.0, 1.0]), Err(MetricsError::TooFewValues(2)));
    }

    #[test]
    fn evaluate_accept_all_matches_unsupervised() {
        let mut cases = vec![case(0, true, 0, 0), case(1, true, 1, 0), case(2, true, 1, 1)];
        cases[1].uncertainty = 1.0;
        let r = evaluate(&cases, &EvaluationOptions::default());
        assert_eq!(r.supervised_objective, r.unsupervised_objective);
        assert_eq!(r.acceptance_rate, MetricValue::Defined(1.0));
        assert_eq!(r.auroc, MetricValue::Defined(1.0));
    }

    #[test]
    fn evaluate_reject_all_marks_undefined() {
        let cases = vec![case(0, false, 0, 0), case(1, false, 1, 0)];
        let r = evaluate(&cases, &EvaluationOptions::default());
        assert!(r.supervised_objective.value().is_none());
        assert_eq!(r.s1(), Some(0.0));
        assert_eq!(r.table_row(2), "0.50 | n.a. | 0.00 | 0.00");
    }

    #[test]
    fn evaluate_counts_unlabeled() {
        let mut cases = vec![case(0, true, 0, 0), case(1, false, 1, 0)];
        cases.push(SupervisedCase { truth: None, ..case(2, true, 0, 0) });
        let r = evaluate(&cases, &EvaluationOptions::default());
        assert_eq!(r.n_unlabeled_excluded, 1);
        assert_eq!((r.n_accepted, r.n_rejected), (2, 1));
        assert_eq!(r.supervised_objective, MetricValue::Defined(1.0));
    }
}
