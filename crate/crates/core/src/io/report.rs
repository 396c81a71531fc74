use std::path::Path;

use super::{read_text, write_atomic, IoError};
use crate::metrics::EvaluationReport;

pub fn report_from_str(text: &str) -> Result<EvaluationReport, IoError> {
    serde_json::from_str(text).map_err(|e| {
        IoError::Report(format!("line {}, column {}: {e}", e.line(), e.column()))
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn report_to_string(report: &EvaluationReport) -> Result<String, IoError> {
    let mut text =
        serde_json::to_string_pretty(report).map_err(|e| IoError::Report(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn read_report(path: &Path) -> Result<EvaluationReport, IoError> {
    report_from_str(&read_text(path)?)
}

pub fn write_report(report: &EvaluationReport, path: &Path) -> Result<(), IoError> {
    write_atomic(path, report_to_string(report)?.as_bytes())
}
