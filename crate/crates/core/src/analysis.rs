//! Study-level analyses: rank-order comparison of quantifiers, sample-size
//! sweeps, and neighborhood sensitivity of a metric over a hyperparameter grid.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::metrics::{pearson, EvaluationOptions, MetricValue};
use crate::pipeline::{run, PipelineError};
use crate::quantifiers::QuantifierId;
use crate::records::Dataset;
use crate::supervisor::CalibrationMode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("nothing to rank")]
    EmptyInput,
    #[error("`{row}` appears twice in group {group:?}")]
    DuplicateCell { row: String, group: Vec<String> },
    #[error("S1 for `{row}` in group {group:?} is not finite")]
    NonFiniteScore { row: String, group: Vec<String> },
    #[error("sample size {size} exceeds the {available} samples available")]
    SizeTooLarge { size: usize, available: usize },
    #[error("sample sizes must be at least 2, got {0}")]
    SizeTooSmall(usize),
    #[error("no records")]
    EmptyDataset,
    #[error("window must be odd and at least 3, got {0}")]
    InvalidWindow(usize),
    #[error("grid is {rows}x{cols}, smaller than the {window}x{window} window")]
    GridTooSmall {
        rows: usize,
        cols: usize,
        window: usize,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grids are not congruent")]
    Incongruent,
    #[error("need at least 3 paired cells, got {0}")]
    TooFewCells(usize),
    #[error("undefined correlation: zero variance")]
    DegenerateVariance,
    #[error("at size {size}: {source}")]
    Pipeline {
        size: usize,
        #[source]
        source: PipelineError,
    },
}

/// One S₁ observation to rank: a row label (quantifier, optionally tagged with
/// the model type) within a group (e.g. subject, source, ε).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankInput {
    pub row: String,
    pub group: Vec<String>,
    pub s1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub rows: Vec<String>,
    pub groups: Vec<Vec<String>>,
    /// `ranks[row][group]`, `None` where the row was not evaluated.
    pub ranks: Vec<Vec<Option<f64>>>,
    pub average_rank: Vec<f64>,
    /// Number of groups each row was ranked in.
    pub n: Vec<usize>,
}

/// Average ranks for `values`, 1 for the largest; ties share the mean of
/// their positions.
pub fn descending_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j hold rank i+1..=j+1.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank rows by S₁ within each group and average over groups.
pub fn rank_order(results: &[RankInput]) -> Result<RankTable, AnalysisError> {
    if results.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    if let Some(bad) = results.iter().find(|r| !r.s1.is_finite()) {
        return Err(AnalysisError::NonFiniteScore {
            row: bad.row.clone(),
            group: bad.group.clone(),
        });
    }
    let rows: Vec<String> = results
        .iter()
        .map(|r| r.row.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let groups: Vec<Vec<String>> = results
        .iter()
        .map(|r| r.group.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let row_index: BTreeMap<&str, usize> =
        rows.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();

    let mut ranks = vec![vec![None; groups.len()]; rows.len()];
    for (g, group) in groups.iter().enumerate() {
        let members: Vec<&RankInput> = results.iter().filter(|r| &r.group == group).collect();
        let mut seen = BTreeSet::new();
        for m in &members {
            if !seen.insert(m.row.as_str()) {
                return Err(AnalysisError::DuplicateCell {
                    row: m.row.clone(),
                    group: group.clone(),
                });
            }
        }
        let scores: Vec<f64> = members.iter().map(|m| m.s1).collect();
        for (m, rank) in members.iter().zip(descending_ranks(&scores)) {
            ranks[row_index[m.row.as_str()]][g] = Some(rank);
        }
    }

    let (average_rank, n) = ranks
        .iter()
        .map(|row| {
            let present: Vec<f64> = row.iter().flatten().copied().collect();
            (present.iter().sum::<f64>() / present.len() as f64, present.len())
        })
        .unzip();

    Ok(RankTable {
        rows,
        groups,
        ranks,
        average_rank,
        n,
    })
}

impl RankTable {
    /// Plain-text table of average ranks; the best (lowest) is wrapped in
    /// `**`.
    pub fn render(&self) -> String {
        let best = self
            .average_rank
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let width = self.rows.iter().map(String::len).max().unwrap_or(0).max(10);
        let mut out = format!("{:<width$} | avg rank | N\n", "quantifier");
        for ((row, avg), n) in self.rows.iter().zip(&self.average_rank).zip(&self.n) {
            let cell = format!("{avg:.4}");
            let cell = if *avg == best { format!("**{cell}**") } else { cell };
            out.push_str(&format!("{row:<width$} | {cell:>8} | {n}\n"));
        }
        out
    }
}

/// Metric values over an integer grid, e.g. training epochs by sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axis1_name: String,
    pub axis2_name: String,
    pub axis1: Vec<i64>,
    pub axis2: Vec<i64>,
    /// `values[i][j]` belongs to `(axis1[i], axis2[j])`; `None` marks a hole.
    pub values: Vec<Vec<Option<f64>>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl SweepGrid {
    pub fn new(
        axis1_name: impl Into<String>,
        axis1: Vec<i64>,
        axis2_name: impl Into<String>,
        axis2: Vec<i64>,
        values: Vec<Vec<Option<f64>>>,
    ) -> Result<Self, AnalysisError> {
        let grid = Self {
            axis1_name: axis1_name.into(),
            axis2_name: axis2_name.into(),
            axis1,
            axis2,
            values,
            metadata: BTreeMap::new(),
        };
        grid.check()?;
        Ok(grid)
    }

    /// Every cell `f(i, j)` over the given axes.
    pub fn from_fn(
        axis1: Vec<i64>,
        axis2: Vec<i64>,
        f: impl Fn(usize, usize) -> Option<f64>,
    ) -> Result<Self, AnalysisError> {
        let values = (0..axis1.len())
            .map(|i| (0..axis2.len()).map(|j| f(i, j)).collect())
            .collect();
        Self::new("axis1", axis1, "axis2", axis2, values)
    }

    pub fn check(&self) -> Result<(), AnalysisError> {
        let strictly_sorted = |a: &[i64]| a.windows(2).all(|w| w[0] < w[1]);
        if !strictly_sorted(&self.axis1) || !strictly_sorted(&self.axis2) {
            return Err(AnalysisError::InvalidGrid("axes must be strictly increasing".into()));
        }
        if self.values.len() != self.axis1.len() {
            return Err(AnalysisError::InvalidGrid(format!(
                "{} rows for {} axis1 values",
                self.values.len(),
                self.axis1.len()
            )));
        }
        if let Some((i, row)) = self
            .values
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != self.axis2.len())
        {
            return Err(AnalysisError::InvalidGrid(format!(
                "row {i} has {} cells for {} axis2 values",
                row.len(),
                self.axis2.len()
            )));
        }
        if self.values.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(AnalysisError::InvalidGrid("values must be finite".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.axis1.len()
    }

    pub fn cols(&self) -> usize {
        self.axis2.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values.get(i).and_then(|r| r.get(j)).copied().flatten()
    }

    fn with_values(&self, values: Vec<Vec<Option<f64>>>) -> SweepGrid {
        SweepGrid {
            values,
            ..self.clone()
        }
    }
}

/// Mean and population std over the `window`×`window` neighborhood of every
/// cell. Borders use the cells of the window that fall inside the grid;
/// holes are skipped, and a cell whose neighborhood is all holes stays one.
pub fn neighborhood_stats(
    grid: &SweepGrid,
    window: usize,
) -> Result<(SweepGrid, SweepGrid), AnalysisError> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(AnalysisError::InvalidWindow(window));
    }
    grid.check()?;
    let (rows, cols) = (grid.rows(), grid.cols());
    if rows < window || cols < window {
        return Err(AnalysisError::GridTooSmall { rows, cols, window });
    }
    let half = window / 2;
    let cells: Vec<(Option<f64>, Option<f64>)> = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            let mut vals = Vec::with_capacity(window * window);
            for a in i.saturating_sub(half)..=(i + half).min(rows - 1) {
                for b in j.saturating_sub(half)..=(j + half).min(cols - 1) {
                    if let Some(v) = grid.get(a, b) {
                        vals.push(v);
                    }
                }
            }
            if vals.is_empty() {
                return (None, None);
            }
            let n = vals.len() as f64;
            // Clamped so rounding cannot push the mean outside the window's
            // range, which also makes constant windows exactly zero-spread.
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = (vals.iter().sum::<f64>() / n).clamp(lo, hi);
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (Some(mean), Some(var.sqrt()))
        })
        .collect();
    let reshape = |pick: fn(&(Option<f64>, Option<f64>)) -> Option<f64>| {
        cells
            .chunks(cols)
            .map(|row| row.iter().map(pick).collect())
            .collect::<Vec<Vec<Option<f64>>>>()
    };
    Ok((
        grid.with_values(reshape(|c| c.0)),
        grid.with_values(reshape(|c| c.1)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Pearson correlation of two congruent grids over the cells defined in both,
/// with a two-sided p-value from Student's t on n − 2 degrees of freedom.
pub fn sensitivity_correlation(
    a: &SweepGrid,
    b: &SweepGrid,
) -> Result<Correlation, AnalysisError> {
    if a.axis1 != b.axis1 || a.axis2 != b.axis2 {
        return Err(AnalysisError::Incongruent);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .values
        .iter()
        .flatten()
        .zip(b.values.iter().flatten())
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    let n = xs.len();
    if n < 3 {
        return Err(AnalysisError::TooFewCells(n));
    }
    let r = pearson(&xs, &ys).ok_or(AnalysisError::DegenerateVariance)?;
    Ok(Correlation {
        r,
        p_value: correlation_p_value(r, n),
        n,
    })
}

/// Two-sided p-value for a sample correlation `r` over `n` pairs.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Which cell values are correlated with the neighborhood std.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    #[default]
    NeighborhoodMean,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub mean: SweepGrid,
    pub std: SweepGrid,
    pub pairing: Pairing,
    /// `Err` carries the reason the correlation is undefined.
    pub correlation: Result<Correlation, String>,
}

/// Neighborhood maps of `grid` and their S-C correlation.
pub fn sensitivity(
    grid: &SweepGrid,
    window: usize,
    pairing: Pairing,
) -> Result<Sensitivity, AnalysisError> {
    let (mean, std) = neighborhood_stats(grid, window)?;
    let left = match pairing {
        Pairing::NeighborhoodMean => &mean,
        Pairing::Raw => grid,
    };
    let correlation = sensitivity_correlation(left, &std).map_err(|e| e.to_string());
    Ok(Sensitivity {
        mean,
        std,
        pairing,
        correlation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub supervised_objective: MetricValue,
    pub acceptance_rate: MetricValue,
    pub s1: MetricValue,
}

/// Re-run the pipeline with every record cut to its first `s` samples, for
/// each `s` in `sizes`.
pub fn sample_size_sweep(
    dataset: &Dataset,
    q: QuantifierId,
    epsilon: f64,
    sizes: &[usize],
    mode: CalibrationMode,
    options: &EvaluationOptions,
) -> Result<BTreeMap<usize, SweepPoint>, AnalysisError> {
    let available = dataset.min_samples().ok_or(AnalysisError::EmptyDataset)?;
    for &size in sizes {
        if size < 2 {
            return Err(AnalysisError::SizeTooSmall(size));
        }
        if size > available {
            return Err(AnalysisError::SizeTooLarge { size, available });
        }
    }
    let mut options = options.clone();
    if !options.betas.contains(&1.0) {
        options.betas.push(1.0);
    }
    sizes
        .par_iter()
        .map(|&size| {
            let truncated = dataset.with_sample_prefix(size);
            let outcome = run(&truncated, q, epsilon, mode, &options)
                .map_err(|source| AnalysisError::Pipeline { size, source })?;
            let report = outcome.report;
            let s1 = report
                .s_beta(1.0)
                .cloned()
                .expect("beta 1 is always requested");
            Ok((
                size,
                SweepPoint {
                    supervised_objective: report.supervised_objective,
                    acceptance_rate: report.acceptance_rate,
                    s1,
                },
            ))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|v| v.into_iter().collect())
}

/// Sweep results as a one-row grid over sample sizes, one grid per metric.
pub fn sweep_to_grids(
    sweep: &BTreeMap<usize, SweepPoint>,
    row: i64,
) -> Result<[SweepGrid; 3], AnalysisError> {
    let sizes: Vec<i64> = sweep.keys().map(|&s| s as i64).collect();
    let make = |name: &str, pick: fn(&SweepPoint) -> &MetricValue| {
        let values = vec![sweep.values().map(|p| pick(p).value()).collect()];
        let mut g = SweepGrid::new("row", vec![row], "samples", sizes.clone(), values)?;
        g.metadata.insert("metric".into(), name.into());
        Ok::<_, AnalysisError>(g)
    };
    Ok([
        make("supervised_objective", |p| &p.supervised_objective)?,
        make("acceptance_rate", |p| &p.acceptance_rate)?,
        make("s1", |p| &p.s1)?,
    ])
}
