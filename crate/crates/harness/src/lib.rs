//! Config-driven orchestration: generate datasets, train every
//! (regime, seed) pair, verify the closed-form claims, and emit comparison
//! tables and loss curves as data files.
//!
//! Every stage reads only what earlier stages wrote under the output root,
//! so a run directory can be inspected or re-verified in isolation.

pub mod artifacts;
pub mod config;
pub mod layout;
mod stages;

pub use config::{parse_override, parse_seeds, Adjustments, ConfigError, ExperimentConfig, Format};
pub use layout::Layout;
pub use stages::{
    generate, report, run_jobs, train_all, verify, ClaimOutcome, GenerateSummary, RegimeRow, ReportSummary, VerifySummary,
    REFERENCE_FOOTER,
};

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run {run} diverged at iteration {iteration} (loss {loss:e})")]
    Divergence { run: String, iteration: usize, loss: f64 },
    #[error("{failed} of {total} claim checks failed")]
    VerificationFailed { failed: usize, total: usize },
    #[error("missing trace or dataset: {0}")]
    MissingTrace(String),
    #[error("run {run}: {source}")]
    Train { run: String, source: trainer::TrainError },
    #[error(transparent)]
    Generate(#[from] dataset_gen::GenError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed artifact: {0}")]
    Malformed(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }

    /// 2 config error, 3 divergence, 4 verification failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Divergence { .. } => 3,
            HarnessError::VerificationFailed { .. } => 4,
            _ => 1,
        }
    }
}
