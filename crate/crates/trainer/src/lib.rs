//! Gradient training of a linear feature extractor `x ↦ x·wᵀ`.
//!
//! Three regimes share one loop: plain ERM, ERM with on-schedule magnitude
//! pruning, and SFP (loss-bound identification, an L1 response penalty on
//! flagged instances, and SVD pruning along their projections). The loop only
//! sees features and targets; population membership is available to an
//! optional monitor that records diagnostics and never feeds back.

mod config;
mod loss;
mod trace;
mod train;

pub use config::{EtaMode, LossKind, PenaltyNorm, PruneSchedule, Regime, TrainConfig};
pub use loss::{
    accuracy, compute_eta, gradient, gradient_decomposed, penalized_gradient, per_instance_losses, residual,
    task_loss, DecomposedGradient,
};
pub use trace::{IterationRecord, PruneEvent, Snapshot, TrainingTrace};
pub use train::{train, train_from, TrainingData};

use pruning::SaliencyVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use subspace_core::{orthonormal_basis, Matrix, SubspaceBasis};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("flagged set is empty")]
    EmptyFlagSet,
    #[error("loss {loss:e} at iteration {iteration} exceeds 1e6; lower the learning rate")]
    Divergence { iteration: usize, loss: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Prune(#[from] pruning::PruneError),
    #[error(transparent)]
    Ident(#[from] identification::IdentError),
    #[error(transparent)]
    Subspace(#[from] subspace_core::SubspaceError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Parameters `w` (m×d), iteration counter and optional channel gates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub w: Matrix,
    pub iteration: usize,
    pub saliency: Option<SaliencyVector>,
}

impl ModelState {
    pub fn new(w: Matrix) -> Self {
        Self { w, iteration: 0, saliency: None }
    }

    /// `scale · N(0, 1)` entries from a ChaCha8 stream keyed on `seed`.
    pub fn initial(m: usize, d: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let w = Matrix::from_fn(m, d, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        });
        Self::new(w)
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    /// Orthonormal basis E of the model space (row space of `w`).
    pub fn basis_e(&self) -> Result<SubspaceBasis, subspace_core::SubspaceError> {
        orthonormal_basis(&self.w)
    }

    /// Gated response `x·wᵀ`.
    pub fn response(&self, x: &Matrix) -> Result<Matrix, TrainError> {
        Ok(pruning::project_features(&self.w, self.saliency.as_ref(), x)?)
    }
}
