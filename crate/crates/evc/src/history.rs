//! Per-step training history CSVs.

use std::fs::File;
use std::path::Path;

use evc_core::dne::GenerationRecord;
use evc_core::sgd::EpochRecord;

use crate::error::{CliError, CliResult};

pub const DNE_HEADER: [&str; 5] = [
    "generation",
    "train_correct",
    "train_acc",
    "test_acc",
    "elapsed_seconds",
];
pub const SGD_HEADER: [&str; 6] = [
    "epoch",
    "train_loss",
    "train_acc",
    "test_acc",
    "lr",
    "elapsed_seconds",
];

/// Row-at-a-time history writer that flushes after every row, so a
/// running job can be followed from another process.
pub struct HistoryWriter {
    inner: csv::Writer<File>,
    path: std::path::PathBuf,
}

impl HistoryWriter {
    fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let mut inner = csv::Writer::from_path(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        inner.write_record(header)?;
        inner.flush().map_err(|e| CliError::io(path, e))?;
        Ok(HistoryWriter {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn dne(path: &Path) -> CliResult<Self> {
        Self::create(path, &DNE_HEADER)
    }

    pub fn sgd(path: &Path) -> CliResult<Self> {
        Self::create(path, &SGD_HEADER)
    }

    fn write(&mut self, fields: &[String]) -> CliResult<()> {
        self.inner.write_record(fields)?;
        self.inner.flush().map_err(|e| CliError::io(&self.path, e))
    }

    pub fn generation(&mut self, r: &GenerationRecord) -> CliResult<()> {
        self.write(&[
            r.generation.to_string(),
            r.train_correct.to_string(),
            r.train_accuracy.to_string(),
            r.test_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            format!("{:.3}", r.elapsed_seconds),
        ])
    }

    pub fn epoch(&mut self, r: &EpochRecord) -> CliResult<()> {
        self.write(&[
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_accuracy.to_string(),
            r.test_accuracy.to_string(),
            r.lr.to_string(),
            format!("{:.3}", r.elapsed_seconds),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryKind {
    Dne,
    Sgd,
}

impl HistoryKind {
    pub fn token(self) -> &'static str {
        match self {
            HistoryKind::Dne => "dne",
            HistoryKind::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryPoint {
    pub step: usize,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub kind: HistoryKind,
    pub points: Vec<HistoryPoint>,
}

/// Reads either history flavour, recognised by its header.
pub fn read_history(path: &Path) -> CliResult<History> {
    let fail = |msg: String| CliError::data(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let kind = if header == DNE_HEADER {
        HistoryKind::Dne
    } else if header == SGD_HEADER {
        HistoryKind::Sgd
    } else {
        return Err(fail(format!(
            "unrecognised history header {}",
            header.join(",")
        )));
    };
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |col: usize| -> CliResult<f64> {
            rec.get(col).and_then(|s| s.parse().ok()).ok_or_else(|| {
                fail(format!(
                    "row {}: bad value in column {}",
                    i + 1,
                    header[col]
                ))
            })
        };
        let step = parse(0)? as usize;
        let train_accuracy = parse(2)?;
        let test_accuracy = match rec.get(3) {
            Some("") | None => None,
            Some(_) => Some(parse(3)?),
        };
        points.push(HistoryPoint {
            step,
            train_accuracy,
            test_accuracy,
        });
    }
    Ok(History { kind, points })
}
