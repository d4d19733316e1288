use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of every metrics CSV.
pub const COLUMNS: [&str; 13] = [
    "experiment",
    "trial_seed",
    "task_id",
    "checkpoint_id",
    "method",
    "gamma",
    "alpha",
    "n_train",
    "accuracy_or_risk",
    "flop_fraction",
    "new_nnz",
    "shared_nnz",
    "wall_ms",
];

/// One observation: a task evaluated at a checkpoint of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    pub trial_seed: u64,
    pub task_id: u32,
    pub checkpoint_id: u32,
    pub method: String,
    pub gamma: f64,
    pub alpha: f64,
    pub n_train: usize,
    pub accuracy_or_risk: f64,
    pub flop_fraction: f64,
    pub new_nnz: u64,
    pub shared_nnz: u64,
    pub wall_ms: u64,
}

impl MetricRow {
    fn check(&self) -> Result<()> {
        if self.method.starts_with("espn") && self.flop_fraction > self.gamma {
            return Err(Error::ConstraintViolated(format!(
                "espn row for task {} has flop fraction {} above gamma {}",
                self.task_id, self.flop_fraction, self.gamma
            )));
        }
        Ok(())
    }
}

/// RFC-4180 CSV writer with the fixed header. Refuses ESPN rows whose FLOP
/// fraction exceeds their gamma.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
        inner.write_record(COLUMNS)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricRow) -> Result<()> {
        row.check()?;
        self.inner.serialize(row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(|e| Error::io("<csv>", e))?;
        self.inner
            .into_inner()
            .map_err(|e| Error::io("<csv>", std::io::Error::other(e.to_string())))
    }
}

pub fn rows_to_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = MetricsWriter::new(Vec::new())?;
    for r in rows {
        w.write(r)?;
    }
    String::from_utf8(w.finish()?).map_err(|e| Error::InvalidConfig(e.to_string()))
}

pub fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let text = rows_to_csv(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(Error::InvalidConfig(format!("unexpected CSV columns {header:?}")));
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}
