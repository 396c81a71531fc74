//! Version 1 record files.
//!
//! ```text
//! {"meta.model":"cnn","num_classes":3,"samples_per_record":2,"task":"classification","version":1}
//! {"id":"img-0","outputs":[[0.7,0.2,0.1],[0.6,0.3,0.1]],"label":0,"split":"test","source":"nominal"}
//! ```
//!
//! Regression samples are numbers, or `[mean, variance]` pairs for models with
//! a variance output. `label` may be omitted or `null`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use super::{read_text, round_significant, write_atomic, IoError};
use crate::records::{
    validate_dataset_with, ClassDistribution, Dataset, GroundTruth, MeanVariance, Outputs,
    PredictionRecord, Source, Split, Task, DEFAULT_SUM_TOLERANCE,
};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RecordFileHeader {
    pub format_version: u64,
    pub task: Task,
    pub num_classes: Option<usize>,
    pub samples_per_record: usize,
    pub metadata: BTreeMap<String, String>,
}

impl RecordFileHeader {
    /// Header describing `dataset`. An empty dataset gets a two-class,
    /// single-sample classification header.
    pub fn for_dataset(dataset: &Dataset) -> Result<Self, IoError> {
        let task = dataset.task().unwrap_or(Task::Classification);
        let samples = dataset.records.first().map(|r| r.outputs.len()).unwrap_or(1);
        if let Some(r) = dataset.records.iter().find(|r| r.outputs.len() != samples) {
            return Err(IoError::Unwritable(format!(
                "record `{}` has {} samples, the first record has {samples}",
                r.input_id,
                r.outputs.len()
            )));
        }
        let num_classes = match task {
            Task::Classification => Some(dataset.num_classes().unwrap_or(2)),
            Task::Regression => None,
        };
        Ok(Self {
            format_version: FORMAT_VERSION,
            task,
            num_classes,
            samples_per_record: samples,
            metadata: dataset.metadata.clone(),
        })
    }

    fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("version".into(), Value::from(self.format_version));
        map.insert("task".into(), Value::from(self.task.to_string()));
        if let Some(c) = self.num_classes {
            map.insert("num_classes".into(), Value::from(c));
        }
        map.insert("samples_per_record".into(), Value::from(self.samples_per_record));
        for (k, v) in &self.metadata {
            map.insert(format!("meta.{k}"), Value::from(v.clone()));
        }
        Value::Object(map)
    }

    fn from_json(line: usize, value: Value) -> Result<Self, IoError> {
        let header_err = |message: String| IoError::Header { line, message };
        let Value::Object(map) = value else {
            return Err(header_err("header must be a JSON object".into()));
        };
        let mut version = None;
        let mut task = None;
        let mut num_classes = None;
        let mut samples = None;
        let mut metadata = BTreeMap::new();
        for (key, value) in map {
            let as_count = |v: &Value| {
                v.as_u64()
                    .ok_or_else(|| header_err(format!("`{key}` must be a non-negative integer")))
            };
            match key.as_str() {
                "version" => version = Some(as_count(&value)?),
                "num_classes" => num_classes = Some(as_count(&value)? as usize),
                "samples_per_record" => samples = Some(as_count(&value)? as usize),
                "task" => {
                    task = Some(match value.as_str() {
                        Some("classification") => Task::Classification,
                        Some("regression") => Task::Regression,
                        _ => {
                            return Err(header_err(
                                "`task` must be \"classification\" or \"regression\"".into(),
                            ))
                        }
                    })
                }
                k if k.starts_with("meta.") => {
                    let Value::String(s) = value else {
                        return Err(header_err(format!("`{key}` must be a string")));
                    };
                    metadata.insert(k["meta.".len()..].to_string(), s);
                }
                _ => return Err(header_err(format!("unknown header key `{key}`"))),
            }
        }
        let version = version.ok_or_else(|| header_err("missing `version`".into()))?;
        if version != FORMAT_VERSION {
            return Err(IoError::UnsupportedVersion(version));
        }
        let task = task.ok_or_else(|| header_err("missing `task`".into()))?;
        let samples =
            samples.ok_or_else(|| header_err("missing `samples_per_record`".into()))?;
        if samples < 1 {
            return Err(header_err("`samples_per_record` must be at least 1".into()));
        }
        match (task, num_classes) {
            (Task::Classification, None) => {
                return Err(header_err("classification header needs `num_classes`".into()))
            }
            (Task::Classification, Some(c)) if c < 2 => {
                return Err(header_err("`num_classes` must be at least 2".into()))
            }
            (Task::Regression, Some(_)) => {
                return Err(header_err("regression header must not set `num_classes`".into()))
            }
            _ => {}
        }
        Ok(Self {
            format_version: version,
            task,
            num_classes,
            samples_per_record: samples,
            metadata,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    outputs: Vec<SampleLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Number>,
    split: Split,
    source: String,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SampleLine {
    Scalar(f64),
    Vector(Vec<f64>),
}

fn parse_error(line: usize, e: &serde_json::Error) -> IoError {
    IoError::Parse {
        line,
        column: e.column(),
        message: e.to_string(),
    }
}

fn build_record(
    line: usize,
    header: &RecordFileHeader,
    raw: RecordLine,
) -> Result<PredictionRecord, IoError> {
    let shape = |message: String| IoError::Shape {
        line,
        input_id: raw.id.clone(),
        message,
    };
    if raw.outputs.len() != header.samples_per_record {
        return Err(shape(format!(
            "{} samples, header declares samples_per_record = {}",
            raw.outputs.len(),
            header.samples_per_record
        )));
    }
    let outputs = match header.task {
        Task::Classification => {
            let c = header.num_classes.unwrap_or(0);
            let mut samples = Vec::with_capacity(raw.outputs.len());
            for (t, s) in raw.outputs.iter().enumerate() {
                match s {
                    SampleLine::Vector(v) if v.len() == c => {
                        samples.push(ClassDistribution::new(v.clone()))
                    }
                    SampleLine::Vector(v) => {
                        return Err(shape(format!(
                            "sample {t} has {} probabilities, header declares num_classes = {c}",
                            v.len()
                        )))
                    }
                    SampleLine::Scalar(_) => {
                        return Err(shape(format!(
                            "sample {t} is a number; classification samples are probability lists"
                        )))
                    }
                }
            }
            Outputs::Classification(samples)
        }
        Task::Regression => {
            if raw.outputs.iter().all(|s| matches!(s, SampleLine::Scalar(_))) {
                Outputs::Regression(
                    raw.outputs
                        .iter()
                        .map(|s| match s {
                            SampleLine::Scalar(v) => *v,
                            SampleLine::Vector(_) => unreachable!(),
                        })
                        .collect(),
                )
            } else {
                let mut pairs = Vec::with_capacity(raw.outputs.len());
                for (t, s) in raw.outputs.iter().enumerate() {
                    match s {
                        SampleLine::Vector(v) if v.len() == 2 => {
                            pairs.push(MeanVariance::new(v[0], v[1]))
                        }
                        _ => {
                            return Err(shape(format!(
                                "sample {t}: regression samples must all be numbers or all be [mean, variance] pairs"
                            )))
                        }
                    }
                }
                Outputs::RegressionWithVariance(pairs)
            }
        }
    };
    let ground_truth = match (&raw.label, header.task) {
        (None, _) => None,
        (Some(n), Task::Classification) => match n.as_u64() {
            Some(c) => Some(GroundTruth::Class(c as usize)),
            None => return Err(shape(format!("label {n} is not a class index"))),
        },
        (Some(n), Task::Regression) => Some(GroundTruth::Value(
            n.as_f64().ok_or_else(|| shape(format!("label {n} is not a number")))?,
        )),
    };
    Ok(PredictionRecord {
        input_id: raw.id,
        outputs,
        ground_truth,
        split: raw.split,
        source: Source::new(raw.source),
    })
}

/// Parse a record file held in memory.
pub fn parse_records(text: &str, tolerance: f64) -> Result<Dataset, IoError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty());

    let Some((header_line, header_text)) = lines.next() else {
        return Err(IoError::Header {
            line: 1,
            message: "empty file, expected a header line".into(),
        });
    };
    let header_value: Value =
        serde_json::from_str(header_text).map_err(|e| parse_error(header_line, &e))?;
    let header = RecordFileHeader::from_json(header_line, header_value)?;

    let mut records = Vec::new();
    let mut line_of: HashMap<String, usize> = HashMap::new();
    for (line, text) in lines {
        let raw: RecordLine = serde_json::from_str(text).map_err(|e| parse_error(line, &e))?;
        let record = build_record(line, &header, raw)?;
        line_of.entry(record.input_id.clone()).or_insert(line);
        records.push(record);
    }

    let dataset = Dataset {
        records,
        metadata: header.metadata,
    };
    let violations = validate_dataset_with(&dataset, tolerance);
    if !violations.is_empty() {
        let located = violations
            .into_iter()
            .map(|v| {
                let line = line_of.get(&v.input_id).copied().unwrap_or(0);
                (line, v)
            })
            .collect();
        return Err(IoError::Invalid(located));
    }
    Ok(dataset)
}

/// Read a record file with the default softmax-sum tolerance.
pub fn read_records(path: &Path) -> Result<Dataset, IoError> {
    read_records_with(path, DEFAULT_SUM_TOLERANCE)
}

pub fn read_records_with(path: &Path, tolerance: f64) -> Result<Dataset, IoError> {
    parse_records(&read_text(path)?, tolerance)
}

fn sample_lines(outputs: &Outputs) -> Vec<SampleLine> {
    match outputs {
        Outputs::Classification(s) => s
            .iter()
            .map(|d| SampleLine::Vector(d.probs().iter().copied().map(round_significant).collect()))
            .collect(),
        Outputs::Regression(v) => v.iter().map(|x| SampleLine::Scalar(round_significant(*x))).collect(),
        Outputs::RegressionWithVariance(p) => p
            .iter()
            .map(|mv| {
                SampleLine::Vector(vec![round_significant(mv.mean), round_significant(mv.variance)])
            })
            .collect(),
    }
}

/// Serialize a dataset in the record file format, floats rounded to 9
/// significant digits.
pub fn records_to_string(dataset: &Dataset) -> Result<String, IoError> {
    let header = RecordFileHeader::for_dataset(dataset)?;
    let mut out = serde_json::to_string(&header.to_json()).map_err(|e| IoError::Unwritable(e.to_string()))?;
    out.push('\n');
    for r in &dataset.records {
        let label = match r.ground_truth {
            None => None,
            Some(GroundTruth::Class(c)) => Some(Number::from(c as u64)),
            Some(GroundTruth::Value(v)) => Some(Number::from_f64(round_significant(v)).ok_or_else(
                || IoError::Unwritable(format!("record `{}` has a non-finite label", r.input_id)),
            )?),
        };
        let line = RecordLine {
            id: r.input_id.clone(),
            outputs: sample_lines(&r.outputs),
            label,
            split: r.split,
            source: r.source.as_str().to_string(),
        };
        let finite = match &r.outputs {
            Outputs::Classification(s) => s.iter().all(|d| d.probs().iter().all(|p| p.is_finite())),
            Outputs::Regression(v) => v.iter().all(|x| x.is_finite()),
            Outputs::RegressionWithVariance(p) => {
                p.iter().all(|mv| mv.mean.is_finite() && mv.variance.is_finite())
            }
        };
        if !finite {
            return Err(IoError::Unwritable(format!(
                "record `{}` has non-finite outputs",
                r.input_id
            )));
        }
        let text = serde_json::to_string(&line).map_err(|e| IoError::Unwritable(e.to_string()))?;
        out.push_str(&text);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_records(dataset: &Dataset, path: &Path) -> Result<(), IoError> {
    write_atomic(path, records_to_string(dataset)?.as_bytes())
}
