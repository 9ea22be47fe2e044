//! Readers and writers for device logs (JSON Lines) and pair/score CSVs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::graph::DeviceLog;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads one [`DeviceLog`] per non-blank line. Each log is validated;
/// failures report the 1-based line number.
pub fn load_logs(path: &Path) -> Result<Vec<DeviceLog>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let log: DeviceLog = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        log.validate().map_err(|source| DataError::InvalidLog {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push(log);
    }
    Ok(out)
}

pub fn write_logs(path: &Path, logs: &[DeviceLog]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for log in logs {
        let line = serde_json::to_string(log).expect("logs serialise");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// A device pair with an optional ground-truth label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DevicePair {
    pub device_a: String,
    pub device_b: String,
    /// `Some(true)` when both devices belong to the same user.
    pub label: Option<bool>,
}

impl DevicePair {
    pub fn labeled(a: &str, b: &str, label: bool) -> Self {
        DevicePair {
            device_a: a.to_string(),
            device_b: b.to_string(),
            label: Some(label),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    device_a: String,
    device_b: String,
    #[serde(default)]
    label: Option<u8>,
}

/// Reads `device_a,device_b[,label]` with a header row; labels are 0 or 1.
pub fn read_pairs(path: &Path) -> Result<Vec<DevicePair>> {
    let mut r = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize::<PairRecord>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e))?;
        let label = match rec.label {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(v) => {
                return Err(DataError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("label must be 0 or 1, got {v}"),
                }
                .into())
            }
        };
        out.push(DevicePair {
            device_a: rec.device_a,
            device_b: rec.device_b,
            label,
        });
    }
    Ok(out)
}

fn parse_err(path: &Path, line: usize, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => DataError::Parse {
            path: path.to_path_buf(),
            line,
            message: match other {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                o => format!("{o:?}"),
            },
        },
    }
}

pub fn write_pairs(path: &Path, pairs: &[DevicePair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(path, 0, e))?;
    w.write_record(["device_a", "device_b", "label"])
        .map_err(|e| parse_err(path, 0, e))?;
    for p in pairs {
        let label = p.label.map(|l| (l as u8).to_string()).unwrap_or_default();
        w.write_record([p.device_a.as_str(), p.device_b.as_str(), label.as_str()])
            .map_err(|e| parse_err(path, 0, e))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes `device_a,device_b,score`.
pub fn write_scores(path: &Path, pairs: &[DevicePair], scores: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(path, 0, e))?;
    w.write_record(["device_a", "device_b", "score"])
        .map_err(|e| parse_err(path, 0, e))?;
    for (p, s) in pairs.iter().zip(scores) {
        w.write_record([p.device_a.clone(), p.device_b.clone(), format!("{s:?}")])
            .map_err(|e| parse_err(path, 0, e))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes `epoch,mean_loss[,val_best_f1]`.
pub fn write_loss_history(path: &Path, history: &[crate::train::EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(path, 0, e))?;
    w.write_record(["epoch", "mean_loss", "val_best_f1"])
        .map_err(|e| parse_err(path, 0, e))?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            format!("{:?}", h.mean_loss),
            h.val_best_f1.map(|f| format!("{f:?}")).unwrap_or_default(),
        ])
        .map_err(|e| parse_err(path, 0, e))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes any serialisable value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).expect("value serialises");
    std::fs::write(path, s + "\n").map_err(io_err(path))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&s).map_err(|e| DataError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?)
}
