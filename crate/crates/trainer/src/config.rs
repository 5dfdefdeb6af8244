use pruning::SpanRestriction;
use serde::{Deserialize, Serialize};

use crate::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Erm,
    MagnitudeBaseline,
    Sfp,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Erm => "erm",
            Regime::MagnitudeBaseline => "magnitude_baseline",
            Regime::Sfp => "sfp",
        }
    }
}

/// How the penalty weight η is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EtaMode {
    /// `factor · 2e`, with e the mean per-dimension target residual of the
    /// flagged instances. `factor = 1` sits on the admissible boundary.
    Auto2e { factor: f64 },
    Fixed { value: f64 },
}

impl Default for EtaMode {
    fn default() -> Self {
        EtaMode::Auto2e { factor: 1.0 }
    }
}

/// Denominator of the flagged-instance penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyNorm {
    /// Mean over the flagged instances.
    Flagged,
    /// Sum over flagged instances divided by the full batch size, so the
    /// penalty is weighted by the flagged fraction.
    #[default]
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Squared,
    /// Softmax cross-entropy over the m outputs; only meaningful on one-hot targets.
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneSchedule {
    /// Prune (and refresh η) every `every` iterations; 0 disables pruning.
    pub every: usize,
    pub energy_keep: f64,
    pub restriction: SpanRestriction,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self { every: 50, energy_keep: 0.9, restriction: SpanRestriction::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub regime: Regime,
    pub eta_mode: EtaMode,
    pub prune: PruneSchedule,
    /// Prior for the ID proportion; the loop never measures it.
    pub p_i_prior: f64,
    /// Online estimate of σ_{F⊤G}; 0 is the most conservative choice.
    pub sigma_prior: f64,
    /// Multiplier on Δ.
    pub delta_slack: f64,
    pub penalty_norm: PenaltyNorm,
    pub loss: LossKind,
    /// Start from all-open channel gates and attenuate them on prunes.
    pub use_saliency: bool,
    pub init_scale: f64,
    /// Keep `w` and its spectrum every `snapshot_every` iterations; 0 disables.
    pub snapshot_every: usize,
    /// Keep per-iteration flagged masks in memory.
    pub keep_masks: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            iterations: 400,
            regime: Regime::Erm,
            eta_mode: EtaMode::default(),
            prune: PruneSchedule::default(),
            p_i_prior: 0.8,
            sigma_prior: 0.0,
            delta_slack: 1.0,
            penalty_norm: PenaltyNorm::default(),
            loss: LossKind::default(),
            use_saliency: false,
            init_scale: 0.01,
            snapshot_every: 10,
            keep_masks: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.prune.energy_keep > 0.0 && self.prune.energy_keep <= 1.0) {
            return bad(format!("energy_keep must lie in (0, 1], got {}", self.prune.energy_keep));
        }
        if !(0.0..=1.0).contains(&self.p_i_prior) {
            return bad(format!("p_i_prior must lie in [0, 1], got {}", self.p_i_prior));
        }
        if !(0.0..=1.0).contains(&self.sigma_prior) {
            return bad(format!("sigma_prior must lie in [0, 1], got {}", self.sigma_prior));
        }
        if self.delta_slack.is_nan() || self.delta_slack <= 0.0 {
            return bad(format!("delta_slack must be positive, got {}", self.delta_slack));
        }
        match self.eta_mode {
            EtaMode::Auto2e { factor } if !(factor >= 0.0 && factor.is_finite()) => {
                bad(format!("eta factor must be nonnegative, got {factor}"))
            }
            EtaMode::Fixed { value } if !(value >= 0.0 && value.is_finite()) => {
                bad(format!("fixed eta must be nonnegative, got {value}"))
            }
            _ => Ok(()),
        }
    }
}
