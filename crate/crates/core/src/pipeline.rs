//! Quantify, calibrate on the validation split, evaluate on the test split.

use thiserror::Error;

use crate::metrics::{
    align_cases, evaluate, EvaluationOptions, EvaluationReport, MaliciousRule, MetricsError,
    SupervisedCase,
};
use crate::quantifiers::{quantify_dataset, QuantifiedPrediction, QuantifierError, QuantifierId};
use crate::records::{Dataset, Split};
use crate::supervisor::{
    apply, calibrate_threshold, CalibrationMode, SupervisorConfig, SupervisorError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Quantifier(#[from] QuantifierError),
    #[error(transparent)]
    Supervisor(#[from] SupervisorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no {0} records")]
    EmptySplit(Split),
    #[error("config has no quantifier")]
    MissingQuantifier,
}

/// `(score, is_benign)` for every labeled prediction; unlabeled ones are
/// dropped.
pub fn labeled_scores(
    predictions: &[QuantifiedPrediction],
    dataset: &Dataset,
    rule: &MaliciousRule,
) -> Vec<(f64, bool)> {
    predictions
        .iter()
        .zip(&dataset.records)
        .filter_map(|(p, r)| {
            let case = SupervisedCase {
                input_id: p.input_id.clone(),
                accepted: true,
                uncertainty: p.uncertainty(),
                predicted: p.predicted,
                truth: r.ground_truth,
            };
            rule.is_malicious(&case).map(|m| (p.score, !m))
        })
        .collect()
}

/// Calibrate `q` at `epsilon` on every record of `validation`.
pub fn calibrate_on(
    validation: &Dataset,
    q: QuantifierId,
    epsilon: f64,
    mode: CalibrationMode,
    rule: &MaliciousRule,
) -> Result<SupervisorConfig, PipelineError> {
    let predictions = quantify_dataset(validation, q)?;
    let scores = labeled_scores(&predictions, validation, rule);
    Ok(calibrate_threshold(&scores, epsilon, q.orientation(), mode)?.with_quantifier(q))
}

/// Apply `config` to every record of `test` and compute the report.
pub fn evaluate_on(
    test: &Dataset,
    config: &SupervisorConfig,
    options: &EvaluationOptions,
) -> Result<EvaluationReport, PipelineError> {
    let q = config.quantifier.ok_or(PipelineError::MissingQuantifier)?;
    config.validate()?;
    let predictions = quantify_dataset(test, q)?;
    let decisions = apply(config, &predictions)?;
    let cases = align_cases(&predictions, &decisions, test)?;
    let mut report = evaluate(&cases, options);
    report.quantifier = Some(q);
    report.threshold = Some(config.threshold);
    report.epsilon = config.epsilon;
    report.mode = config.mode;
    report.metadata = test.metadata.clone();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub config: SupervisorConfig,
    pub report: EvaluationReport,
}

/// Calibrate on the validation split of `dataset`, then evaluate on its test
/// split.
pub fn run(
    dataset: &Dataset,
    q: QuantifierId,
    epsilon: f64,
    mode: CalibrationMode,
    options: &EvaluationOptions,
) -> Result<PipelineOutcome, PipelineError> {
    let validation = dataset.split(Split::Validation);
    if validation.is_empty() {
        return Err(PipelineError::EmptySplit(Split::Validation));
    }
    let test = dataset.split(Split::Test);
    if test.is_empty() {
        return Err(PipelineError::EmptySplit(Split::Test));
    }
    let config = calibrate_on(&validation, q, epsilon, mode, &options.rule)?;
    let report = evaluate_on(&test, &config, options)?;
    Ok(PipelineOutcome { config, report })
}
