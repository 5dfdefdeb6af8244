//! Reconciles closed-form predictions with measurements from training runs.
//!
//! Each check returns a [`TheoryReport`] carrying the predicted and measured
//! values, the relative error and a verdict against a configurable tolerance.
//! The checks read generator ground truth (bases, `W*`, population masks);
//! training itself never does.

mod checks;
mod measures;

pub use checks::{check_lemma1, check_lemma2, check_prop2, check_prop3, EtaSweep};
pub use measures::{
    directional_rates, feature_projection_error, feature_projection_gradient, invariant_fidelity, population_spectrum,
    prune_fidelity_drops, spurious_energy, DirectionalRates,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("trace has no monitor columns; train with the dataset as monitor")]
    MissingMonitor,
    #[error("not converged: avg loss changed by {0:.3}% over the last 10 iterations")]
    NotConverged(f64),
    #[error("bad η sweep: {0}")]
    BadSweep(String),
    #[error("no snapshot inside iterations {lo}..={hi}")]
    EmptyWindow { lo: usize, hi: usize },
    #[error(transparent)]
    Train(#[from] trainer::TrainError),
    #[error(transparent)]
    Prune(#[from] pruning::PruneError),
    #[error(transparent)]
    Ident(#[from] identification::IdentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    Prop2,
    Prop3,
    Lemma1,
    Lemma2,
}

impl Claim {
    pub fn name(self) -> &'static str {
        match self {
            Claim::Prop2 => "prop2",
            Claim::Prop3 => "prop3",
            Claim::Lemma1 => "lemma1",
            Claim::Lemma2 => "lemma2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Acceptance tolerances. The defaults are the pilot-calibrated values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Median relative error of the directional-gradient difference.
    pub prop2: f64,
    /// Relative error of the plateau loss gap.
    pub prop3: f64,
    /// Slack under 1 for the risk-gap ratio.
    pub lemma1: f64,
    /// Allowed relative fidelity loss of compliant runs against ERM.
    pub lemma2: f64,
    /// Absolute level treated as zero in the symmetric directional case.
    pub symmetric_abs: f64,
    /// Symmetric loss-gap tolerance, as a fraction of the initial avg loss.
    pub symmetric_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { prop2: 0.25, prop3: 0.35, lemma1: 0.05, lemma2: 0.05, symmetric_abs: 1e-6, symmetric_gap: 0.05 }
    }
}

/// Side-by-side predicted and measured values for one claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub claim: Claim,
    pub predicted: Vec<f64>,
    pub measured: Vec<f64>,
    pub relative_error: f64,
    /// Iteration-0 loss gap; only the loss-gap check sets it.
    pub epsilon_term: Option<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub fingerprint: String,
    /// Named auxiliary figures (structural term, σ, per-run fidelities, ...).
    pub details: BTreeMap<String, f64>,
    pub note: String,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report fields are serializable")
    }
}

/// `|measured − predicted| / max(|predicted|, 1e-12)`.
pub fn relative_error(measured: f64, predicted: f64) -> f64 {
    (measured - predicted).abs() / predicted.abs().max(1e-12)
}

/// FNV-1a over the given parts; stable across platforms and toolchains.
pub fn fingerprint(parts: &[&str]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.bytes().chain(std::iter::once(0x1f)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

pub(crate) fn dataset_fingerprint(ds: &dataset_gen::BiasedDataset, extra: &str) -> String {
    let desc = format!("seed={} n={} d={} m={} p_i={:e} kind={:?}", ds.seed, ds.n(), ds.d(), ds.m(), ds.p_i, ds.kind);
    fingerprint(&[&desc, extra])
}

/// Plain-text summary, one line per report.
pub fn summary_table(reports: &[TheoryReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:<7} {:>14} {:>14} {:>11} {:>7} {:>12}",
        "claim", "verdict", "predicted", "measured", "rel_error", "tol", "epsilon"
    );
    for r in reports {
        let head = |v: &[f64]| v.first().map_or("-".to_string(), |x| format!("{x:.6e}"));
        let verdict = match r.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        };
        let eps = r.epsilon_term.map_or("-".to_string(), |e| format!("{e:.4e}"));
        let _ = writeln!(
            out,
            "{:<8} {:<7} {:>14} {:>14} {:>11.4e} {:>7} {:>12}",
            r.claim.name(),
            verdict,
            head(&r.predicted),
            head(&r.measured),
            r.relative_error,
            r.tolerance,
            eps
        );
    }
    out
}
