#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use uqsup_core::records::{
    ClassDistribution, Dataset, GroundTruth, MeanVariance, Outputs, PredictionRecord, Source,
    Split,
};

/// Deterministic runner without failure persistence.
pub fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

/// A distribution over `c` classes with probabilities in multiples of 1/16,
/// so every sum and mean of a few of them is exact.
pub fn dyadic_distribution(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u32..=16, c - 1).prop_map(move |cuts| {
        let mut cuts = cuts;
        cuts.push(0);
        cuts.push(16);
        cuts.sort_unstable();
        cuts.windows(2).map(|w| (w[1] - w[0]) as f64 / 16.0).collect()
    })
}

/// A distribution from integer weights on a coarse grid, renormalized.
pub fn coarse_distribution(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u32..=4, c)
        .prop_filter("at least one positive weight", |w| w.iter().any(|x| *x > 0))
        .prop_map(|w| {
            let total: u32 = w.iter().sum();
            w.iter().map(|x| *x as f64 / total as f64).collect()
        })
}

/// A distribution with continuous probabilities.
pub fn continuous_distribution(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..1.0, c).prop_map(|w| {
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    })
}

pub fn record(input_id: &str, samples: Vec<Vec<f64>>, label: Option<usize>) -> PredictionRecord {
    PredictionRecord {
        input_id: input_id.to_string(),
        outputs: Outputs::Classification(samples.into_iter().map(ClassDistribution::new).collect()),
        ground_truth: label.map(GroundTruth::Class),
        split: Split::Test,
        source: Source::nominal(),
    }
}

/// `(C, samples)` with C in `classes` and T in `samples`, drawn from `dist`.
pub fn class_samples<S, F>(
    classes: std::ops::RangeInclusive<usize>,
    samples: std::ops::RangeInclusive<usize>,
    dist: F,
) -> impl Strategy<Value = (usize, Vec<Vec<f64>>)>
where
    S: Strategy<Value = Vec<f64>> + 'static,
    F: Fn(usize) -> S + Clone + 'static,
{
    (classes, samples).prop_flat_map(move |(c, t)| {
        (Just(c), prop::collection::vec(dist(c), t))
    })
}

/// Regression samples, with or without a variance channel.
pub fn regression_outputs(
    samples: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = Outputs> {
    prop_oneof![
        prop::collection::vec(-100.0f64..100.0, samples.clone()).prop_map(Outputs::Regression),
        prop::collection::vec((-100.0f64..100.0, 0.0f64..10.0), samples).prop_map(|v| {
            Outputs::RegressionWithVariance(
                v.into_iter().map(|(m, s)| MeanVariance::new(m, s)).collect(),
            )
        }),
    ]
}

/// A valid classification dataset with unique ids, optional labels, mixed
/// splits and sources, and unicode metadata.
pub fn classification_dataset() -> impl Strategy<Value = Dataset> {
    (2usize..=4, 1usize..=4, 0usize..12).prop_flat_map(|(c, t, n)| {
        let rec = (
            prop::collection::vec(continuous_distribution(c), t),
            prop::option::of(0..c),
            prop::sample::select(vec![Split::Train, Split::Validation, Split::Test]),
            prop::sample::select(vec!["nominal", "ood", "corrupted fog"]),
        );
        (
            prop::collection::vec(rec, n),
            prop::collection::btree_map("[a-z]{1,6}", "\\PC{0,8}", 0..3),
        )
            .prop_map(|(recs, metadata)| {
                let records = recs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (samples, label, split, source))| {
                        let mut r = record(&format!("in-{i}"), samples, label);
                        r.split = split;
                        r.source = Source::new(source);
                        r
                    })
                    .collect();
                Dataset::new(records).with_metadata(metadata)
            })
    })
}

/// A valid regression dataset (shape uniform across records).
pub fn regression_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..=4, 1usize..10, any::<bool>()).prop_flat_map(|(t, n, with_var)| {
        let outputs = if with_var {
            prop::collection::vec((-1e6f64..1e6, 0.0f64..1e3), t)
                .prop_map(|v| {
                    Outputs::RegressionWithVariance(
                        v.into_iter().map(|(m, s)| MeanVariance::new(m, s)).collect(),
                    )
                })
                .boxed()
        } else {
            prop::collection::vec(-1e6f64..1e6, t)
                .prop_map(Outputs::Regression)
                .boxed()
        };
        prop::collection::vec((outputs, prop::option::of(-1e3f64..1e3)), n).prop_map(|recs| {
            let records = recs
                .into_iter()
                .enumerate()
                .map(|(i, (outputs, label))| PredictionRecord {
                    input_id: format!("r{i}"),
                    outputs,
                    ground_truth: label.map(GroundTruth::Value),
                    split: Split::Validation,
                    source: Source::ood(),
                })
                .collect();
            Dataset::new(records).with_metadata(BTreeMap::new())
        })
    })
}

/// Every float of two datasets agrees within `tol` and everything else is
/// equal.
pub fn datasets_close(a: &Dataset, b: &Dataset, tol: f64) -> bool {
    fn floats(o: &Outputs) -> Vec<f64> {
        match o {
            Outputs::Classification(s) => s.iter().flat_map(|d| d.probs().to_vec()).collect(),
            Outputs::Regression(v) => v.clone(),
            Outputs::RegressionWithVariance(p) => {
                p.iter().flat_map(|mv| [mv.mean, mv.variance]).collect()
            }
        }
    }
    let close = |x: f64, y: f64| (x - y).abs() <= tol * x.abs().max(1.0);
    a.metadata == b.metadata
        && a.records.len() == b.records.len()
        && a.records.iter().zip(&b.records).all(|(x, y)| {
            let (fx, fy) = (floats(&x.outputs), floats(&y.outputs));
            x.input_id == y.input_id
                && x.split == y.split
                && x.source == y.source
                && std::mem::discriminant(&x.outputs) == std::mem::discriminant(&y.outputs)
                && x.outputs.len() == y.outputs.len()
                && fx.len() == fy.len()
                && fx.iter().zip(&fy).all(|(p, q)| close(*p, *q))
                && match (x.ground_truth, y.ground_truth) {
                    (None, None) => true,
                    (Some(GroundTruth::Class(p)), Some(GroundTruth::Class(q))) => p == q,
                    (Some(GroundTruth::Value(p)), Some(GroundTruth::Value(q))) => close(p, q),
                    _ => false,
                }
        })
}
