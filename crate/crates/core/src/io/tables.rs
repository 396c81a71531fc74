//! CSV tables and PGM heatmaps.
//!
//! Grid CSV layout:
//!
//! ```text
//! # quantifier=VR
//! epoch/samples,2,3,4
//! 1,0.91,0.92,
//! 2,0.90,0.93,0.94
//! ```
//!
//! Lines starting with `#` carry `key=value` metadata, the header cell holds
//! both axis names, and an empty cell is a hole.

use std::collections::BTreeMap;
use std::path::Path;

use super::{read_text, write_atomic, IoError};
use crate::analysis::{RankTable, SweepGrid};
use crate::quantifiers::{Prediction, QuantifiedPrediction};

fn csv_error(e: impl std::fmt::Display) -> IoError {
    IoError::Table(e.to_string())
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<String, IoError> {
    let bytes = writer.into_inner().map_err(csv_error)?;
    String::from_utf8(bytes).map_err(csv_error)
}

/// `id,predicted,score,orientation`, one row per prediction.
pub fn predictions_to_csv(predictions: &[QuantifiedPrediction]) -> Result<String, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "predicted", "score", "orientation"])
        .map_err(csv_error)?;
    for p in predictions {
        let predicted = match p.predicted {
            Prediction::Class(c) => c.to_string(),
            Prediction::Value(v) => v.to_string(),
        };
        w.write_record([
            p.input_id.as_str(),
            &predicted,
            &p.score.to_string(),
            &p.orientation.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

/// One row per ranked row label, one column per group (keys joined by `/`),
/// then the average rank and N.
pub fn rank_table_to_csv(table: &RankTable) -> Result<String, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["quantifier".to_string()];
    header.extend(table.groups.iter().map(|g| g.join("/")));
    header.push("average_rank".into());
    header.push("n".into());
    w.write_record(&header).map_err(csv_error)?;
    for (i, row) in table.rows.iter().enumerate() {
        let mut rec = vec![row.clone()];
        rec.extend(
            table.ranks[i]
                .iter()
                .map(|r| r.map(|v| v.to_string()).unwrap_or_default()),
        );
        rec.push(table.average_rank[i].to_string());
        rec.push(table.n[i].to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    finish(w)
}

pub fn grid_to_csv(grid: &SweepGrid) -> Result<String, IoError> {
    let mut out = String::new();
    for (k, v) in &grid.metadata {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(IoError::Table(format!("metadata entry `{k}` cannot be written")));
        }
        out.push_str(&format!("# {k}={v}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![format!("{}/{}", grid.axis1_name, grid.axis2_name)];
    header.extend(grid.axis2.iter().map(i64::to_string));
    w.write_record(&header).map_err(csv_error)?;
    for (a, row) in grid.axis1.iter().zip(&grid.values) {
        let mut rec = vec![a.to_string()];
        rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_error)?;
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

pub fn grid_from_csv(text: &str) -> Result<SweepGrid, IoError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut metadata = BTreeMap::new();
    let mut body = String::new();
    let mut first_body_line = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if let Some(meta) = line.strip_prefix('#') {
            let (k, v) = meta.trim_start().split_once('=').ok_or_else(|| {
                IoError::Table(format!("line {}: metadata must be `# key=value`", n + 1))
            })?;
            metadata.insert(k.trim().to_string(), v.to_string());
        } else if !line.trim().is_empty() {
            first_body_line.get_or_insert(n + 1);
            body.push_str(line);
            body.push('\n');
        }
    }
    let offset = first_body_line.unwrap_or(1);
    let located = |row: usize, msg: String| IoError::Table(format!("line {}: {msg}", offset + row));

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| located(i, e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let (header, data) = rows
        .split_first()
        .ok_or_else(|| IoError::Table("grid has no header row".into()))?;
    let (names, axis2_cells) = header
        .split_first()
        .ok_or_else(|| IoError::Table("empty header row".into()))?;
    let (axis1_name, axis2_name) = names.split_once('/').unwrap_or((names.as_str(), ""));
    let parse_int = |row: usize, s: &str| {
        s.trim()
            .parse::<i64>()
            .map_err(|_| located(row, format!("axis value `{s}` is not an integer")))
    };
    let axis2 = axis2_cells
        .iter()
        .map(|s| parse_int(0, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut axis1 = Vec::with_capacity(data.len());
    let mut values = Vec::with_capacity(data.len());
    for (i, row) in data.iter().enumerate() {
        let (a, cells) = row
            .split_first()
            .ok_or_else(|| located(i + 1, "empty row".into()))?;
        if cells.len() != axis2.len() {
            return Err(located(
                i + 1,
                format!("{} cells, header has {}", cells.len(), axis2.len()),
            ));
        }
        axis1.push(parse_int(i + 1, a)?);
        values.push(
            cells
                .iter()
                .map(|c| {
                    let c = c.trim();
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>()
                            .map(Some)
                            .map_err(|_| located(i + 1, format!("`{c}` is not a number")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    let mut grid = SweepGrid::new(axis1_name, axis1, axis2_name, axis2, values)
        .map_err(|e| IoError::Table(e.to_string()))?;
    grid.metadata = metadata;
    Ok(grid)
}

pub fn read_grid(path: &Path) -> Result<SweepGrid, IoError> {
    grid_from_csv(&read_text(path)?).map_err(|e| match e {
        IoError::Table(m) => IoError::Table(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_grid(grid: &SweepGrid, path: &Path) -> Result<(), IoError> {
    write_atomic(path, grid_to_csv(grid)?.as_bytes())
}

/// Plain (P2) grayscale image, one pixel per cell, axis1 down and axis2
/// across. Values are scaled linearly onto 1..=255; holes are black.
pub fn grid_to_pgm(grid: &SweepGrid) -> String {
    let defined: Vec<f64> = grid.values.iter().flatten().flatten().copied().collect();
    let lo = defined.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P2\n{} {}\n255\n", grid.cols(), grid.rows());
    for row in &grid.values {
        let pixels: Vec<String> = row
            .iter()
            .map(|v| match v {
                None => 0,
                Some(_) if hi <= lo => 128,
                Some(x) => 1 + ((x - lo) / (hi - lo) * 254.0).round() as u32,
            })
            .map(|p| p.to_string())
            .collect();
        out.push_str(&pixels.join(" "));
        out.push('\n');
    }
    out
}
