//! Per-epoch metrics as CSV with a JSON-lines mirror.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::EpochRecord;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Column order of the CSV body. Changing it requires a schema bump.
pub const METRICS_COLUMNS: [&str; 10] = [
    "epoch",
    "train_loss",
    "eval_accuracy",
    "alpha",
    "global_sparsity",
    "model_sparsity",
    "per_layer_sparsity",
    "train_flops_fraction",
    "infer_flops_fraction",
    "lr",
];

/// CSV header: a `#` schema comment followed by the column row.
pub fn csv_header() -> String {
    format!(
        "# autosparse metrics schema v{METRICS_SCHEMA_VERSION}\n{}\n",
        METRICS_COLUMNS.join(",")
    )
}

/// One CSV row; per-layer sparsities are `;`-separated and a missing
/// accuracy is left empty.
pub fn csv_row(r: &EpochRecord) -> String {
    let per_layer: Vec<String> = r.per_layer_sparsity.iter().map(|v| v.to_string()).collect();
    format!(
        "{},{},{},{},{},{},{},{},{},{}\n",
        r.epoch,
        r.train_loss,
        r.eval_accuracy.map(|a| a.to_string()).unwrap_or_default(),
        r.alpha,
        r.global_sparsity,
        r.model_sparsity,
        per_layer.join(";"),
        r.train_flops_fraction,
        r.infer_flops_fraction,
        r.lr,
    )
}

pub struct MetricsWriter {
    csv_path: PathBuf,
    csv: BufWriter<File>,
    jsonl_path: PathBuf,
    jsonl: BufWriter<File>,
}

impl MetricsWriter {
    /// Creates `<dir>/metrics.csv` and `<dir>/metrics.jsonl`.
    pub fn create(dir: &Path) -> Result<Self> {
        let csv_path = dir.join("metrics.csv");
        let jsonl_path = dir.join("metrics.jsonl");
        let mut csv = BufWriter::new(File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?);
        let jsonl = BufWriter::new(File::create(&jsonl_path).map_err(|e| Error::io(&jsonl_path, e))?);
        csv.write_all(csv_header().as_bytes()).map_err(|e| Error::io(&csv_path, e))?;
        Ok(Self {
            csv_path,
            csv,
            jsonl_path,
            jsonl,
        })
    }

    /// Appends and flushes one epoch so a crash loses at most the current one.
    pub fn write(&mut self, r: &EpochRecord) -> Result<()> {
        self.csv
            .write_all(csv_row(r).as_bytes())
            .and_then(|_| self.csv.flush())
            .map_err(|e| Error::io(&self.csv_path, e))?;
        let mut line = serde_json::to_vec(r)?;
        line.push(b'\n');
        self.jsonl
            .write_all(&line)
            .and_then(|_| self.jsonl.flush())
            .map_err(|e| Error::io(&self.jsonl_path, e))
    }
}
