//! Where every artifact lives under the output root.
//!
//! ```text
//! <out>/config.toml                      resolved config copy
//! <out>/manifest.json                    versions + config fingerprint
//! <out>/data/seed-<s>/env-<j>.{csv,json}
//! <out>/runs/<regime>-seed-<s>/{trace.csv, prune.jsonl, snapshots.jsonl, model.json, run.json}
//! <out>/verify/{verify.jsonl, summary.txt, seed-<s>/plateau_trace.csv}
//! <out>/report/{accuracy.csv, accuracy.txt, curves/<regime>.csv}
//! ```

use std::path::{Path, PathBuf};

use trainer::Regime;

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_copy(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn data_dir(&self, seed: u64) -> PathBuf {
        self.root.join("data").join(format!("seed-{seed}"))
    }

    pub fn env_files(&self, seed: u64, env: usize) -> (PathBuf, PathBuf) {
        let dir = self.data_dir(seed);
        (dir.join(format!("env-{env}.csv")), dir.join(format!("env-{env}.json")))
    }

    pub fn run_name(regime: Regime, seed: u64) -> String {
        format!("{}-seed-{seed}", regime.name())
    }

    pub fn run_dir(&self, regime: Regime, seed: u64) -> PathBuf {
        self.root.join("runs").join(Self::run_name(regime, seed))
    }

    pub fn verify_dir(&self) -> PathBuf {
        self.root.join("verify")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}
