use std::io::Write;

use pruning::PruneReport;
use serde::{Deserialize, Serialize};
use subspace_core::Matrix;

use crate::{ModelState, Regime, TrainError};

/// One row of the trace CSV. Column order is the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub avg_loss: f64,
    /// Monitor-only columns; empty when training ran without a monitor.
    pub id_loss: Option<f64>,
    pub ood_loss: Option<f64>,
    pub sup_id: f64,
    pub inf_id_plain: f64,
    pub inf_id_fair: f64,
    pub delta: f64,
    pub flagged_fraction: f64,
    pub flag_precision: Option<f64>,
    pub eta: f64,
    /// Retained rank when a prune happened at this iteration.
    pub pruned_rank: Option<usize>,
}

impl IterationRecord {
    pub const COLUMNS: [&'static str; 12] = [
        "iteration",
        "avg_loss",
        "id_loss",
        "ood_loss",
        "sup_id",
        "inf_id_plain",
        "inf_id_fair",
        "delta",
        "flagged_fraction",
        "flag_precision",
        "eta",
        "pruned_rank",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneEvent {
    pub iteration: usize,
    pub regime: Regime,
    pub eta: f64,
    pub flagged: usize,
    pub report: PruneReport,
    #[serde(skip)]
    pub w_before: Matrix,
    #[serde(skip)]
    pub w_after: Matrix,
    #[serde(skip)]
    pub gates_before: Option<Vec<f64>>,
    #[serde(skip)]
    pub gates_after: Option<Vec<f64>>,
}

/// Parameters as they were when iteration `iteration`'s losses were measured.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub w: Matrix,
    pub gates: Option<Vec<f64>>,
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub regime: Regime,
    pub records: Vec<IterationRecord>,
    pub prune_events: Vec<PruneEvent>,
    pub snapshots: Vec<Snapshot>,
    /// Per-iteration flagged masks, when requested.
    pub masks: Vec<Vec<bool>>,
    pub final_state: ModelState,
}

impl TrainingTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Snapshot taken at exactly `iteration`, if one was kept.
    pub fn snapshot_at(&self, iteration: usize) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.iteration == iteration)
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}
