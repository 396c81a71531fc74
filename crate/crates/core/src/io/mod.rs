//! File formats.
//!
//! * record files: one JSON header line followed by one JSON record per line
//!   (see `FORMAT.md` at the repository root);
//! * supervisor configs: TOML;
//! * evaluation reports: pretty-printed JSON;
//! * grids, rank tables and quantifier outputs: CSV;
//! * heatmaps: plain PGM.
//!
//! Every file is written through a temporary sibling and renamed into place.

mod config;
mod records;
mod report;
mod tables;

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{config_from_str, config_to_string, read_config, write_config};
pub use records::{
    parse_records, read_records, read_records_with, records_to_string, write_records,
    RecordFileHeader, FORMAT_VERSION,
};
pub use report::{read_report, report_from_str, report_to_string, write_report};
pub use tables::{
    grid_from_csv, grid_to_csv, grid_to_pgm, predictions_to_csv, rank_table_to_csv, read_grid,
    write_grid,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {error}", .path.display())]
    Fs { path: PathBuf, error: std::io::Error },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("unsupported format version {0} (this build reads version 1)")]
    UnsupportedVersion(u64),
    #[error("line {line}, record `{input_id}`: {message}")]
    Shape {
        line: usize,
        input_id: String,
        message: String,
    },
    #[error("{}", format_violations(.0))]
    Invalid(Vec<(usize, crate::records::Violation)>),
    #[error("config: {0}")]
    Config(String),
    #[error("report: {0}")]
    Report(String),
    #[error("table: {0}")]
    Table(String),
    #[error("cannot write: {0}")]
    Unwritable(String),
}

fn format_violations(v: &[(usize, crate::records::Violation)]) -> String {
    let mut out = format!("{} invariant violation(s)", v.len());
    for (line, violation) in v.iter().take(5) {
        out.push_str(&format!("; line {line}: {violation}"));
    }
    if v.len() > 5 {
        out.push_str("; ...");
    }
    out
}

impl IoError {
    pub(crate) fn fs(path: &Path, source: std::io::Error) -> Self {
        IoError::Fs {
            path: path.to_path_buf(),
            error: source,
        }
    }
}

/// Read a UTF-8 file, dropping a leading byte-order mark.
pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::fs(path, e))?;
    Ok(match text.strip_prefix('\u{feff}') {
        Some(rest) => rest.to_string(),
        None => text,
    })
}

/// Write `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| IoError::fs(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| IoError::fs(&dir, e))?;
    tmp.write_all(contents).map_err(|e| IoError::fs(path, e))?;
    tmp.flush().map_err(|e| IoError::fs(path, e))?;
    tmp.persist(path).map_err(|e| IoError::fs(path, e.error))?;
    Ok(())
}

/// Round to 9 significant digits, the precision contract of record files.
pub fn round_significant(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Serde helpers for thresholds, which may be infinite: finite values are
/// plain numbers, infinities are the strings `inf` / `-inf`.
pub mod float_or_infinity {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            s.serialize_f64(*value)
        } else if value.is_nan() {
            s.serialize_str("nan")
        } else if *value > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number, `inf` or `-inf`, got `{other}`"
                ))),
            },
        }
    }
}

/// [`float_or_infinity`] for optional values.
pub mod opt_float_or_infinity {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::float_or_infinity")] f64);

    pub fn serialize<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        value.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}
