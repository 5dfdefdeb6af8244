//! On-disk forms of training outputs. Matrices are stored as row lists;
//! serde_json's round-trip float mode keeps them bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use pruning::PruneReport;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use subspace_core::Matrix;
use trainer::{IterationRecord, PruneEvent, Regime, Snapshot, TrainConfig};

use crate::HarnessError;

pub const FORMAT_VERSION: u32 = 1;

pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from(rows: &[Vec<f64>]) -> Result<Matrix, HarnessError> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(HarnessError::Malformed("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneLine {
    pub iteration: usize,
    pub regime: Regime,
    pub eta: f64,
    pub flagged: usize,
    pub report: PruneReport,
    pub w_before: Vec<Vec<f64>>,
    pub w_after: Vec<Vec<f64>>,
    pub gates_before: Option<Vec<f64>>,
    pub gates_after: Option<Vec<f64>>,
}

impl From<&PruneEvent> for PruneLine {
    fn from(e: &PruneEvent) -> Self {
        Self {
            iteration: e.iteration,
            regime: e.regime,
            eta: e.eta,
            flagged: e.flagged,
            report: e.report.clone(),
            w_before: rows_of(&e.w_before),
            w_after: rows_of(&e.w_after),
            gates_before: e.gates_before.clone(),
            gates_after: e.gates_after.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotLine {
    pub iteration: usize,
    pub w: Vec<Vec<f64>>,
    pub gates: Option<Vec<f64>>,
    pub singular_values: Vec<f64>,
}

impl From<&Snapshot> for SnapshotLine {
    fn from(s: &Snapshot) -> Self {
        Self { iteration: s.iteration, w: rows_of(&s.w), gates: s.gates.clone(), singular_values: s.singular_values.clone() }
    }
}

impl SnapshotLine {
    pub fn to_snapshot(&self) -> Result<Snapshot, HarnessError> {
        Ok(Snapshot {
            iteration: self.iteration,
            w: matrix_from(&self.w)?,
            gates: self.gates.clone(),
            singular_values: self.singular_values.clone(),
        })
    }
}

/// Final model plus the evaluation the report aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub run: String,
    pub regime: Regime,
    pub seed: u64,
    pub data_seed: u64,
    pub iterations: usize,
    pub w: Vec<Vec<f64>>,
    pub gates: Option<Vec<f64>>,
    pub final_avg_loss: f64,
    pub final_id_loss: Option<f64>,
    pub final_ood_loss: Option<f64>,
    pub test_loss: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Self-description of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run: String,
    pub format_version: u32,
    pub harness_version: String,
    pub regime: Regime,
    pub seed: u64,
    pub data_seed: u64,
    pub train_config: TrainConfig,
    /// The experiment config, as TOML.
    pub experiment: String,
}

/// Output-root manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootManifest {
    pub format_version: u32,
    pub harness_version: String,
    pub config_fingerprint: String,
    pub seeds: Vec<u64>,
    pub regimes: Vec<Regime>,
}

pub fn harness_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

pub fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| HarnessError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|()| w.flush()).map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn open(path: &Path) -> Result<File, HarnessError> {
    File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            HarnessError::MissingTrace(path.display().to_string())
        } else {
            HarnessError::io(path, e)
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    Ok(serde_json::from_reader(BufReader::new(open(path)?))?)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut out = Vec::new();
    for line in BufReader::new(open(path)?).lines() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<IterationRecord>, HarnessError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
