//! Synthetic biased environments.
//!
//! An environment mixes two populations. ID rows carry an invariant component
//! plus a spurious one; OOD rows carry the same invariant component plus an
//! unknown one. The three feature splits are mutually orthogonal by
//! construction, so every subspace quantity the verifier needs has an exact
//! ground-truth value.

mod environment;
mod io;
mod split;
mod suite;

pub use environment::{
    classification_view, make_environment, pool, BiasedDataset, DatasetKind, EnvironmentConfig,
    GroundTruth, TruthLayout,
};
pub use io::{read_dataset, write_dataset, DatasetMetadata};
pub use split::{random_orthogonal, FeatureSplit};
pub use suite::{make_suite, EnvironmentSuite, SuiteConfig};

pub use subspace_core::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("split dims {dims:?} need {need} ambient dims but d = {d}")]
    BadSplit { dims: [usize; 3], need: usize, d: usize },
    #[error("proportion {0} outside [0, 1]")]
    BadProportion(f64),
    #[error("need at least 4 instances, got {0}")]
    TooFewInstances(usize),
    #[error("classes must be at least 2, got {0}")]
    BadClasses(usize),
    #[error("bias ratio list is empty")]
    EmptySuite,
    #[error("cannot pool an empty list of datasets")]
    EmptyPool,
    #[error("datasets disagree on shape: {0}")]
    ShapeMismatch(String),
    #[error("truth layout channels {channels:?} do not sum to m = {m}")]
    BadLayout { channels: [usize; 3], m: usize },
    #[error(transparent)]
    Subspace(#[from] subspace_core::SubspaceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed dataset file: {0}")]
    Malformed(String),
}
