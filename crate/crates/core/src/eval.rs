//! Threshold sweep, precision/recall/F1 and curve export.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};

/// Number of thresholds in the sweep: `0.00, 0.01, …, 1.00`.
pub const SWEEP_POINTS: usize = 101;

pub fn sweep_thresholds() -> Vec<f64> {
    (0..SWEEP_POINTS).map(|i| i as f64 / 100.0).collect()
}

/// Counts and rates at one threshold. A pair is predicted positive when its
/// score is `>=` the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// 0 when nothing is predicted positive.
    pub precision: f64,
    /// 0 when there are no actual positives.
    pub recall: f64,
    /// 0 when precision + recall is 0.
    pub f1: f64,
}

impl ThresholdRow {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ThresholdRow {
            threshold,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// One row per threshold, ascending.
    pub rows: Vec<ThresholdRow>,
    pub best_f1: f64,
    /// Lowest threshold attaining `best_f1`.
    pub best_threshold: f64,
}

impl EvalReport {
    /// `(recall, precision)` points ordered by recall ascending; equal
    /// recalls keep descending-threshold order.
    pub fn pr_curve(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self.rows.iter().rev().map(|r| (r.recall, r.precision)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }

    /// `(threshold, f1)` points, thresholds ascending.
    pub fn f1_curve(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.threshold, r.f1)).collect()
    }

    pub fn best_row(&self) -> &ThresholdRow {
        self.rows
            .iter()
            .find(|r| r.threshold == self.best_threshold)
            .expect("best threshold is one of the rows")
    }
}

/// Sweeps the standard thresholds over `scores` with binary `labels`.
pub fn evaluate_threshold_sweep(scores: &[f64], labels: &[bool]) -> Result<EvalReport> {
    if scores.len() != labels.len() {
        return Err(Error::config(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NumericalAbort(format!("non-finite score {bad}")));
    }
    // Sort by descending score; predicted positives at threshold t are then
    // a prefix, and prefix sums give the counts.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let mut pos_prefix = vec![0usize; scores.len() + 1];
    for (k, &i) in order.iter().enumerate() {
        pos_prefix[k + 1] = pos_prefix[k] + labels[i] as usize;
    }
    let total_pos = pos_prefix[scores.len()];

    let rows: Vec<ThresholdRow> = sweep_thresholds()
        .into_iter()
        .map(|t| {
            let predicted = sorted.partition_point(|&s| s >= t);
            let tp = pos_prefix[predicted];
            ThresholdRow::from_counts(t, tp, predicted - tp, total_pos - tp)
        })
        .collect();
    let mut best = rows[0];
    for r in &rows[1..] {
        if r.f1 > best.f1 {
            best = *r;
        }
    }
    Ok(EvalReport {
        best_f1: best.f1,
        best_threshold: best.threshold,
        rows,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into(),
        other => DataError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        }
        .into(),
    }
}

/// Writes a two-column float CSV. Values use the shortest representation
/// that round-trips exactly.
pub fn write_xy_csv(path: &Path, header: [&str; 2], pts: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for (x, y) in pts {
        w.write_record([format!("{x:?}"), format!("{y:?}")])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub fn read_xy_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    DataError::Parse {
                        path: path.to_path_buf(),
                        line: i + 2,
                        message: format!("column {} is not a number", k + 1),
                    }
                    .into()
                })
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}

/// Writes `pr_curve.csv` (recall, precision) and `f1_threshold.csv`
/// (threshold, f1) into `dir`, returning both paths.
pub fn pr_curve_export(report: &EvalReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let pr = dir.join("pr_curve.csv");
    let f1 = dir.join("f1_threshold.csv");
    write_xy_csv(&pr, ["recall", "precision"], &report.pr_curve())?;
    write_xy_csv(&f1, ["threshold", "f1"], &report.f1_curve())?;
    Ok((pr, f1))
}

/// Full sweep table: threshold, precision, recall, f1, tp, fp, fn.
pub fn write_sweep_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["threshold", "precision", "recall", "f1", "tp", "fp", "fn"])
        .map_err(|e| csv_err(path, e))?;
    for r in &report.rows {
        w.write_record([
            format!("{:?}", r.threshold),
            format!("{:?}", r.precision),
            format!("{:?}", r.recall),
            format!("{:?}", r.f1),
            r.tp.to_string(),
            r.fp.to_string(),
            r.fn_.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}
