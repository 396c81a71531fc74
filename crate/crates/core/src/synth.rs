//! Seeded synthetic prediction records.
//!
//! Each classification input belongs to a Gaussian cluster in logit space:
//! its logits are `margin * onehot(y) + sigma_i * z`, with a per-input noise
//! level `sigma_i`. Sampled outputs add further noise
//! `sample_noise * sigma_i * z_t` per sample, so noisier inputs are both
//! misclassified more often and more dispersed across samples.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::records::{
    ClassDistribution, Dataset, GroundTruth, MeanVariance, Outputs, PredictionRecord, Source,
    Split, Task,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub task: Task,
    pub num_classes: usize,
    /// Samples per record; 1 mimics a point predictor.
    pub samples: usize,
    pub validation: usize,
    pub test: usize,
    /// Logit of the true class before noise.
    pub margin: f64,
    /// Per-input noise levels are uniform on `[0, noise_max]`.
    pub noise_max: f64,
    /// Sample-to-sample noise relative to the input's noise level.
    pub sample_noise: f64,
    /// Share of test inputs drawn with doubled noise and tagged `ood`.
    pub ood_fraction: f64,
    /// Regression only: emit `[mean, variance]` samples.
    pub with_variance: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: Task::Classification,
            num_classes: 3,
            samples: 10,
            validation: 1000,
            test: 1000,
            margin: 3.0,
            noise_max: 3.0,
            sample_noise: 0.5,
            ood_fraction: 0.0,
            with_variance: false,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn classification_record(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    sigma: f64,
) -> (Outputs, GroundTruth) {
    let c = config.num_classes;
    let label = rng.random_range(0..c);
    let base: Vec<f64> = (0..c)
        .map(|k| {
            let center = if k == label { config.margin } else { 0.0 };
            center + sigma * normal(rng)
        })
        .collect();
    let samples = (0..config.samples)
        .map(|_| {
            let logits: Vec<f64> = base
                .iter()
                .map(|b| b + config.sample_noise * sigma * normal(rng))
                .collect();
            ClassDistribution::new(softmax(&logits))
        })
        .collect();
    (Outputs::Classification(samples), GroundTruth::Class(label))
}

fn regression_record(
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
    sigma: f64,
) -> (Outputs, GroundTruth) {
    let truth: f64 = normal(rng);
    let base = truth + sigma * normal(rng);
    let means: Vec<f64> = (0..config.samples)
        .map(|_| base + config.sample_noise * sigma * normal(rng))
        .collect();
    let outputs = if config.with_variance {
        Outputs::RegressionWithVariance(
            means
                .into_iter()
                .map(|m| MeanVariance::new(m, sigma * sigma))
                .collect(),
        )
    } else {
        Outputs::Regression(means)
    };
    (outputs, GroundTruth::Value(truth))
}

/// Validation records followed by test records, fully determined by
/// `config`.
pub fn generate(config: &SynthConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_ood = (config.test as f64 * config.ood_fraction.clamp(0.0, 1.0)).round() as usize;
    let plan = (0..config.validation)
        .map(|i| (Split::Validation, format!("val-{i:05}"), false))
        .chain((0..config.test).map(|i| {
            let ood = i >= config.test - n_ood;
            (Split::Test, format!("test-{i:05}"), ood)
        }));

    let records = plan
        .map(|(split, input_id, ood)| {
            let mut sigma = rng.random_range(0.0..=config.noise_max);
            if ood {
                sigma *= 2.0;
            }
            let (outputs, truth) = match config.task {
                Task::Classification => classification_record(config, &mut rng, sigma),
                Task::Regression => regression_record(config, &mut rng, sigma),
            };
            PredictionRecord {
                input_id,
                outputs,
                ground_truth: Some(truth),
                split,
                source: if ood { Source::ood() } else { Source::nominal() },
            }
        })
        .collect();

    let mut metadata = BTreeMap::new();
    metadata.insert("generator".into(), "gaussian-clusters".into());
    metadata.insert("seed".into(), config.seed.to_string());
    metadata.insert("noise_max".into(), config.noise_max.to_string());
    metadata.insert("sample_noise".into(), config.sample_noise.to_string());
    Dataset::new(records).with_metadata(metadata)
}
