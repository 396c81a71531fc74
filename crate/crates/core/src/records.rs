//! Recorded model outputs: the data every other module consumes.
//!
//! A [`PredictionRecord`] holds what a model emitted for one input. Point
//! predictors contribute a single sample; MC-Dropout and deep ensembles
//! contribute `T >= 2` samples. Records are plain data: constructing one never
//! fails, and [`validate_dataset`] reports every broken invariant as a
//! [`Violation`] instead of raising an error.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Maximum tolerated deviation of a softmax vector's sum from 1.
pub const DEFAULT_SUM_TOLERANCE: f64 = 1e-4;

/// One softmax output vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ClassDistribution {
    fn from(probs: Vec<f64>) -> Self {
        Self(probs)
    }
}

/// A regression sample carrying its own predicted variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanVariance {
    pub mean: f64,
    pub variance: f64,
}

impl MeanVariance {
    pub fn new(mean: f64, variance: f64) -> Self {
        Self { mean, variance }
    }
}

/// Prediction task a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Classification => f.write_str("classification"),
            Task::Regression => f.write_str("regression"),
        }
    }
}

/// The samples recorded for one input. Every variant keeps all samples of the
/// same kind, so only the class count can differ between samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Outputs {
    Classification(Vec<ClassDistribution>),
    Regression(Vec<f64>),
    RegressionWithVariance(Vec<MeanVariance>),
}

impl Outputs {
    /// Number of samples `T`.
    pub fn len(&self) -> usize {
        match self {
            Outputs::Classification(s) => s.len(),
            Outputs::Regression(s) => s.len(),
            Outputs::RegressionWithVariance(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Outputs::Classification(_) => Task::Classification,
            Outputs::Regression(_) | Outputs::RegressionWithVariance(_) => Task::Regression,
        }
    }

    /// Class count of the first sample, for classification outputs.
    pub fn num_classes(&self) -> Option<usize> {
        match self {
            Outputs::Classification(s) => s.first().map(ClassDistribution::num_classes),
            _ => None,
        }
    }

    pub fn has_variance(&self) -> bool {
        matches!(self, Outputs::RegressionWithVariance(_))
    }

    /// The first `n` samples (all of them when `n >= T`).
    pub fn prefix(&self, n: usize) -> Outputs {
        match self {
            Outputs::Classification(s) => Outputs::Classification(s[..n.min(s.len())].to_vec()),
            Outputs::Regression(s) => Outputs::Regression(s[..n.min(s.len())].to_vec()),
            Outputs::RegressionWithVariance(s) => {
                Outputs::RegressionWithVariance(s[..n.min(s.len())].to_vec())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroundTruth {
    Class(usize),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, validation or test)")),
        }
    }
}

/// Where an input came from. `nominal` and `ood` are the usual values, but any
/// tag is accepted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Source(String);

impl Source {
    pub fn new(tag: impl Into<String>) -> Self {
        Self(tag.into())
    }

    pub fn nominal() -> Self {
        Self("nominal".into())
    }

    pub fn ood() -> Self {
        Self("ood".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub input_id: String,
    pub outputs: Outputs,
    pub ground_truth: Option<GroundTruth>,
    pub split: Split,
    pub source: Source,
}

impl PredictionRecord {
    /// Copy of this record keeping only the first `n` samples.
    pub fn with_sample_prefix(&self, n: usize) -> PredictionRecord {
        PredictionRecord {
            outputs: self.outputs.prefix(n),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<PredictionRecord>,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(records: Vec<PredictionRecord>) -> Self {
        Self {
            records,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Task of the first record.
    pub fn task(&self) -> Option<Task> {
        self.records.first().map(|r| r.outputs.task())
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.records.iter().find_map(|r| r.outputs.num_classes())
    }

    /// Smallest sample count over all records.
    pub fn min_samples(&self) -> Option<usize> {
        self.records.iter().map(|r| r.outputs.len()).min()
    }

    /// Records of one split, in their original order.
    pub fn split(&self, split: Split) -> Dataset {
        self.filtered(|r| r.split == split)
    }

    pub fn filtered(&self, keep: impl Fn(&PredictionRecord) -> bool) -> Dataset {
        Dataset {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Copy with every record cut down to its first `n` samples.
    pub fn with_sample_prefix(&self, n: usize) -> Dataset {
        Dataset {
            records: self.records.iter().map(|r| r.with_sample_prefix(n)).collect(),
            metadata: self.metadata.clone(),
        }
    }
}

/// A broken record or dataset invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub input_id: String,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NoSamples,
    TooFewClasses { sample: usize, found: usize },
    InvalidProbability { sample: usize, class: usize, value: f64 },
    SumOutOfTolerance { sample: usize, sum: f64, tolerance: f64 },
    InconsistentClassCount { sample: usize, expected: usize, found: usize },
    NonFiniteValue { sample: usize },
    NegativeVariance { sample: usize, variance: f64 },
    LabelOutOfRange { label: usize, num_classes: usize },
    LabelKindMismatch { task: Task },
    NonFiniteLabel,
    DatasetClassCountMismatch { expected: usize, found: usize },
    MixedTasks { expected: Task, found: Task },
    DuplicateInputId,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ViolationKind::*;
        match self {
            NoSamples => write!(f, "record has no samples"),
            TooFewClasses { sample, found } => {
                write!(f, "sample {sample}: {found} classes, at least 2 required")
            }
            InvalidProbability { sample, class, value } => {
                write!(f, "sample {sample}: probability {value} of class {class} is not a finite non-negative number")
            }
            SumOutOfTolerance { sample, sum, tolerance } => write!(
                f,
                "sample {sample}: sum {} exceeds tolerance {tolerance} around 1",
                short_float(*sum)
            ),
            InconsistentClassCount { sample, expected, found } => write!(
                f,
                "sample {sample}: {found} classes, earlier samples have {expected}"
            ),
            NonFiniteValue { sample } => write!(f, "sample {sample}: non-finite value"),
            NegativeVariance { sample, variance } => {
                write!(f, "sample {sample}: negative variance {variance}")
            }
            LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes} classes")
            }
            LabelKindMismatch { task } => write!(f, "label kind does not match {task} outputs"),
            NonFiniteLabel => write!(f, "non-finite label"),
            DatasetClassCountMismatch { expected, found } => write!(
                f,
                "record has {found} classes, dataset has {expected}"
            ),
            MixedTasks { expected, found } => {
                write!(f, "{found} record in a {expected} dataset")
            }
            DuplicateInputId => write!(f, "duplicate input_id"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.input_id, self.kind)
    }
}

fn short_float(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0');
    s.trim_end_matches('.').to_string()
}

/// Invariant violations of a single record, checked in isolation.
pub fn validate_record(record: &PredictionRecord, tolerance: f64) -> Vec<ViolationKind> {
    let mut out = Vec::new();
    if record.outputs.is_empty() {
        out.push(ViolationKind::NoSamples);
    }
    match &record.outputs {
        Outputs::Classification(samples) => {
            let expected = samples.first().map(ClassDistribution::num_classes).unwrap_or(0);
            for (t, dist) in samples.iter().enumerate() {
                let probs = dist.probs();
                if probs.len() != expected {
                    out.push(ViolationKind::InconsistentClassCount {
                        sample: t,
                        expected,
                        found: probs.len(),
                    });
                } else if probs.len() < 2 {
                    out.push(ViolationKind::TooFewClasses {
                        sample: t,
                        found: probs.len(),
                    });
                }
                if let Some((c, &p)) = probs
                    .iter()
                    .enumerate()
                    .find(|(_, p)| !p.is_finite() || **p < 0.0)
                {
                    out.push(ViolationKind::InvalidProbability {
                        sample: t,
                        class: c,
                        value: p,
                    });
                    continue;
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > tolerance {
                    out.push(ViolationKind::SumOutOfTolerance {
                        sample: t,
                        sum,
                        tolerance,
                    });
                }
            }
            match record.ground_truth {
                Some(GroundTruth::Class(label)) if expected >= 2 && label >= expected => {
                    out.push(ViolationKind::LabelOutOfRange {
                        label,
                        num_classes: expected,
                    });
                }
                Some(GroundTruth::Value(_)) => out.push(ViolationKind::LabelKindMismatch {
                    task: Task::Classification,
                }),
                _ => {}
            }
        }
        Outputs::Regression(values) => {
            for (t, v) in values.iter().enumerate() {
                if !v.is_finite() {
                    out.push(ViolationKind::NonFiniteValue { sample: t });
                }
            }
            check_regression_label(record.ground_truth, &mut out);
        }
        Outputs::RegressionWithVariance(pairs) => {
            for (t, mv) in pairs.iter().enumerate() {
                if !mv.mean.is_finite() || !mv.variance.is_finite() {
                    out.push(ViolationKind::NonFiniteValue { sample: t });
                } else if mv.variance < 0.0 {
                    out.push(ViolationKind::NegativeVariance {
                        sample: t,
                        variance: mv.variance,
                    });
                }
            }
            check_regression_label(record.ground_truth, &mut out);
        }
    }
    out
}

fn check_regression_label(label: Option<GroundTruth>, out: &mut Vec<ViolationKind>) {
    match label {
        Some(GroundTruth::Value(v)) if !v.is_finite() => out.push(ViolationKind::NonFiniteLabel),
        // Integer labels are accepted as regression targets.
        _ => {}
    }
}

/// All invariant violations of `dataset` under the default softmax tolerance.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    validate_dataset_with(dataset, DEFAULT_SUM_TOLERANCE)
}

/// All invariant violations of `dataset`; empty iff the dataset is valid.
pub fn validate_dataset_with(dataset: &Dataset, tolerance: f64) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    let task = dataset.task();
    let classes = dataset.num_classes();

    for record in &dataset.records {
        let mut push = |kind| {
            violations.push(Violation {
                input_id: record.input_id.clone(),
                kind,
            })
        };
        if !seen.insert(record.input_id.as_str()) {
            push(ViolationKind::DuplicateInputId);
        }
        let found_task = record.outputs.task();
        if let Some(expected) = task {
            if expected != found_task {
                push(ViolationKind::MixedTasks {
                    expected,
                    found: found_task,
                });
            }
        }
        if let (Some(expected), Some(found)) = (classes, record.outputs.num_classes()) {
            if expected != found {
                push(ViolationKind::DatasetClassCountMismatch { expected, found });
            }
        }
        for kind in validate_record(record, tolerance) {
            push(kind);
        }
    }
    violations
}

/// What [`partition`] groups records by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKey {
    Split,
    Source,
}

/// Group records by split or source. Record order is preserved inside each
/// group and metadata is copied into every group.
pub fn partition(dataset: &Dataset, by: PartitionKey) -> BTreeMap<String, Dataset> {
    let mut groups: BTreeMap<String, Dataset> = BTreeMap::new();
    for record in &dataset.records {
        let key = match by {
            PartitionKey::Split => record.split.as_str().to_string(),
            PartitionKey::Source => record.source.as_str().to_string(),
        };
        groups
            .entry(key)
            .or_insert_with(|| Dataset {
                records: Vec::new(),
                metadata: dataset.metadata.clone(),
            })
            .records
            .push(record.clone());
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_record(id: &str, probs: &[&[f64]], label: Option<usize>, split: Split) -> PredictionRecord {
        PredictionRecord {
            input_id: id.into(),
            outputs: Outputs::Classification(
                probs.iter().map(|p| ClassDistribution::new(p.to_vec())).collect(),
            ),
            ground_truth: label.map(GroundTruth::Class),
            split,
            source: Source::nominal(),
        }
    }

    #[test]
    fn valid_single_record() {
        let d = Dataset::new(vec![class_record("a", &[&[0.5, 0.5]], Some(0), Split::Test)]);
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn sum_violation_names_the_sum() {
        let d = Dataset::new(vec![class_record("a", &[&[0.5, 0.6]], None, Split::Test)]);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].input_id, "a");
        let msg = v[0].to_string();
        assert!(msg.contains("sum 1.1 exceeds tolerance"), "{msg}");
    }

    #[test]
    fn duplicate_ids() {
        let d = Dataset::new(vec![
            class_record("a", &[&[0.5, 0.5]], None, Split::Test),
            class_record("a", &[&[0.2, 0.8]], None, Split::Test),
        ]);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::DuplicateInputId);
    }

    #[test]
    fn label_and_shape_violations() {
        let d = Dataset::new(vec![
            class_record("a", &[&[0.5, 0.5], &[0.2, 0.3, 0.5]], Some(2), Split::Test),
            class_record("b", &[&[0.2, 0.3, 0.5]], None, Split::Test),
        ]);
        let kinds: Vec<_> = validate_dataset(&d).into_iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::InconsistentClassCount {
            sample: 1,
            expected: 2,
            found: 3
        }));
        assert!(kinds.contains(&ViolationKind::LabelOutOfRange { label: 2, num_classes: 2 }));
        assert!(kinds.contains(&ViolationKind::DatasetClassCountMismatch { expected: 2, found: 3 }));
    }

    #[test]
    fn tolerance_is_configurable() {
        let d = Dataset::new(vec![class_record("a", &[&[0.5, 0.501]], None, Split::Test)]);
        assert_eq!(validate_dataset(&d).len(), 1);
        assert!(validate_dataset_with(&d, 1e-2).is_empty());
    }

    #[test]
    fn regression_variance_checks() {
        let r = PredictionRecord {
            input_id: "r".into(),
            outputs: Outputs::RegressionWithVariance(vec![
                MeanVariance::new(1.0, 0.5),
                MeanVariance::new(1.0, -0.1),
            ]),
            ground_truth: Some(GroundTruth::Value(1.0)),
            split: Split::Test,
            source: Source::nominal(),
        };
        let v = validate_dataset(&Dataset::new(vec![r]));
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0].kind, ViolationKind::NegativeVariance { sample: 1, .. }));
    }

    #[test]
    fn partition_by_split() {
        let d = Dataset::new(vec![
            class_record("a", &[&[0.5, 0.5]], None, Split::Validation),
            class_record("b", &[&[0.5, 0.5]], None, Split::Test),
            class_record("c", &[&[0.5, 0.5]], None, Split::Test),
        ]);
        let parts = partition(&d, PartitionKey::Split);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts["validation"].len(), 1);
        let test_ids: Vec<_> = parts["test"].records.iter().map(|r| r.input_id.as_str()).collect();
        assert_eq!(test_ids, ["b", "c"]);
    }

    #[test]
    fn partition_by_source_and_empty() {
        assert!(partition(&Dataset::default(), PartitionKey::Split).is_empty());
        let mut ood = class_record("b", &[&[0.5, 0.5]], None, Split::Test);
        ood.source = Source::ood();
        let d = Dataset::new(vec![class_record("a", &[&[0.5, 0.5]], None, Split::Test), ood]);
        let parts = partition(&d, PartitionKey::Source);
        assert_eq!(parts["nominal"].len(), 1);
        assert_eq!(parts["ood"].len(), 1);
    }

    #[test]
    fn prefix_truncates_samples() {
        let r = class_record("a", &[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]], None, Split::Test);
        assert_eq!(r.with_sample_prefix(2).outputs.len(), 2);
        assert_eq!(r.with_sample_prefix(10).outputs.len(), 3);
    }
}
