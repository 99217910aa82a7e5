//! CSV ingestion with the SMILES filters applied and every drop accounted for.

use std::path::Path;

use chemtext_core::codec::{validate_smiles, MAX_SMILES_LEN};
use chemtext_core::data::{Dataset, Record};
use chemtext_core::model::{TaskSpec, TaskType};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which CSV columns to read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Columns {
    pub smiles: String,
    /// Label columns in output order; empty means every other column.
    pub labels: Vec<String>,
}

impl Default for Columns {
    fn default() -> Self {
        Self { smiles: "smiles".into(), labels: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    InvalidSmiles,
    TooLong,
    MissingTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRow {
    /// 1-based line in the file (the header is line 1).
    pub line: u64,
    pub smiles: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub accepted: usize,
    pub dropped_invalid: usize,
    pub dropped_too_long: usize,
    pub dropped_missing_target: usize,
    pub dropped: Vec<DroppedRow>,
    /// `(lower bound, count)` over accepted SMILES lengths in buckets of 10.
    pub length_histogram: Vec<(usize, usize)>,
}

impl LoadReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped_invalid + self.dropped_too_long + self.dropped_missing_target
    }
}

fn histogram(lengths: impl Iterator<Item = usize>) -> Vec<(usize, usize)> {
    let mut counts = vec![0usize; MAX_SMILES_LEN / 10 + 1];
    for l in lengths {
        counts[l / 10] += 1;
    }
    counts.into_iter().enumerate().filter(|(_, c)| *c > 0).map(|(i, c)| (i * 10, c)).collect()
}

/// Reads a labeled SMILES table.
///
/// Rows with an invalid or over-long SMILES are dropped and counted, as are
/// regression rows without a target. A non-numeric label, or a
/// classification label other than 0/1, is an error naming the row.
pub fn load_csv(path: &Path, task: TaskType, columns: &Columns) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 1, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let smiles_col = find(&columns.smiles)
        .ok_or_else(|| Error::Csv { path: path.into(), row: 1, detail: format!("no {:?} column", columns.smiles) })?;
    let label_names: Vec<String> = if columns.labels.is_empty() {
        header.iter().enumerate().filter(|(i, _)| *i != smiles_col).map(|(_, h)| h.to_string()).collect()
    } else {
        columns.labels.clone()
    };
    let label_cols = label_names
        .iter()
        .map(|n| {
            find(n).ok_or_else(|| Error::Csv { path: path.into(), row: 1, detail: format!("no {n:?} column") })
        })
        .collect::<Result<Vec<_>>>()?;
    if label_cols.is_empty() {
        return Err(Error::Csv { path: path.into(), row: 1, detail: "no label columns".into() });
    }
    let spec = match task {
        TaskType::Regression => TaskSpec::regression(),
        TaskType::Classification => TaskSpec::classification(label_cols.len()),
    };
    if spec.n_outputs != label_cols.len() {
        return Err(Error::Config(format!(
            "regression takes exactly one label column, got {}: {}",
            label_cols.len(),
            label_names.join(", ")
        )));
    }

    let mut records = Vec::new();
    let mut report = LoadReport {
        rows_read: 0,
        accepted: 0,
        dropped_invalid: 0,
        dropped_too_long: 0,
        dropped_missing_target: 0,
        dropped: Vec::new(),
        length_histogram: Vec::new(),
    };
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(path, line, e)
        })?;
        let line = row.position().map_or(0, |p| p.line());
        report.rows_read += 1;
        let smiles = row.get(smiles_col).unwrap_or("").to_string();
        let mut labels = Vec::with_capacity(label_cols.len());
        for (&c, name) in label_cols.iter().zip(&label_names) {
            let cell = row.get(c).unwrap_or("");
            if cell.is_empty() {
                labels.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Csv {
                path: path.into(),
                row: line,
                detail: format!("column {name:?}: {cell:?} is not a number"),
            })?;
            if !v.is_finite() || (spec.is_classification() && v != 0.0 && v != 1.0) {
                return Err(Error::Csv {
                    path: path.into(),
                    row: line,
                    detail: format!("column {name:?}: invalid label {cell:?}"),
                });
            }
            labels.push(Some(v));
        }
        let reason = if smiles.chars().count() > MAX_SMILES_LEN {
            Some(DropReason::TooLong)
        } else if !validate_smiles(&smiles).is_valid() {
            Some(DropReason::InvalidSmiles)
        } else if !spec.is_classification() && labels[0].is_none() {
            Some(DropReason::MissingTarget)
        } else {
            None
        };
        match reason {
            Some(reason) => {
                match reason {
                    DropReason::InvalidSmiles => report.dropped_invalid += 1,
                    DropReason::TooLong => report.dropped_too_long += 1,
                    DropReason::MissingTarget => report.dropped_missing_target += 1,
                }
                report.dropped.push(DroppedRow { line, smiles, reason });
            }
            None => records.push(Record { smiles, labels }),
        }
    }
    report.accepted = records.len();
    report.length_histogram = histogram(records.iter().map(|r| r.smiles.chars().count()));
    if report.dropped_total() > 0 {
        log::warn!(
            "{}: dropped {} of {} rows ({} invalid, {} too long, {} missing target)",
            path.display(),
            report.dropped_total(),
            report.rows_read,
            report.dropped_invalid,
            report.dropped_too_long,
            report.dropped_missing_target
        );
    }
    let name = path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    let dataset = Dataset::new(name, spec, label_names, records)?;
    Ok((dataset, report))
}

fn csv_error(path: &Path, row: u64, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Csv { path: path.into(), row, detail: format!("{other:?}") },
    }
}
