//! Identification of spurious-dominated instances from task-loss bounds.
//!
//! Between two iterations the average loss moves by a known amount, and the
//! mixture structure of the data pins the ID loss to an interval around the
//! previous average shifted by a bias correction. Instances whose loss sits
//! below the upper end of that interval are flagged as likely ID.

use dataset_gen::BiasedDataset;
use serde::{Deserialize, Serialize};
use subspace_core::{orthonormal_basis, overlap_spectrum};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IdentError {
    #[error("proportions p_i = {p_i}, p_o = {p_o} are not a valid split")]
    BadProportion { p_i: f64, p_o: f64 },
    #[error("overlap estimate {0} outside [0, 1]")]
    BadSigma(f64),
    #[error("population '{0}' is empty")]
    EmptyPopulation(&'static str),
    #[error(transparent)]
    Subspace(#[from] subspace_core::SubspaceError),
}

/// Bounds on the ID loss at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentificationBounds {
    pub avg_loss_prev: f64,
    pub avg_loss_now: f64,
    pub sup_id: f64,
    pub inf_id_plain: f64,
    pub inf_id_fair: f64,
    pub delta: f64,
    pub sigma_fg: f64,
    pub p_i: f64,
    pub p_o: f64,
}

impl IdentificationBounds {
    /// Scales the flagging threshold. A slack of one keeps `delta = sup_id`.
    pub fn with_slack(mut self, slack: f64) -> Self {
        self.delta = self.sup_id * slack;
        self
    }

    /// Whether `id_loss` falls in `[inf_id_fair, sup_id]`.
    pub fn covers(&self, id_loss: f64) -> bool {
        self.inf_id_fair <= id_loss && id_loss <= self.sup_id
    }

    /// `avg_now − id_loss − correction`: how far the mixture approximation is
    /// from the measured ID loss.
    pub fn approximation_residual(&self, id_loss: f64) -> f64 {
        self.avg_loss_now - id_loss - correction(self.p_i, self.p_o, self.sigma_fg)
    }
}

/// Bias correction `p_o·(p_i − p_o)·(1 − σ)`.
pub fn correction(p_i: f64, p_o: f64, sigma_fg: f64) -> f64 {
    p_o * (p_i - p_o) * (1.0 - sigma_fg)
}

fn check_proportions(p_i: f64, p_o: f64) -> Result<(), IdentError> {
    let ok = p_i.is_finite()
        && p_o.is_finite()
        && (0.0..=1.0).contains(&p_i)
        && (0.0..=1.0).contains(&p_o)
        && (p_i + p_o - 1.0).abs() < 1e-9;
    if ok {
        Ok(())
    } else {
        Err(IdentError::BadProportion { p_i, p_o })
    }
}

/// Upper bound, plain lower bound and fair-reduction lower bound of the ID
/// loss, from the average losses of the previous and current iteration.
///
/// The fair bound assumes every instance shares the loss reduction and is
/// clamped at zero, since losses cannot be negative.
pub fn loss_bounds(
    avg_prev: f64,
    avg_now: f64,
    p_i: f64,
    p_o: f64,
    sigma_fg_prev: f64,
    sigma_fg_now: f64,
) -> Result<IdentificationBounds, IdentError> {
    check_proportions(p_i, p_o)?;
    for s in [sigma_fg_prev, sigma_fg_now] {
        if !(0.0..=1.0).contains(&s) {
            return Err(IdentError::BadSigma(s));
        }
    }
    let sup_id = (avg_prev - correction(p_i, p_o, sigma_fg_prev)).abs();
    let inf_id_plain = (avg_now - correction(p_i, p_o, sigma_fg_now)).abs();
    let inf_id_fair = (sup_id - (avg_now - avg_prev).abs()).max(0.0);
    Ok(IdentificationBounds {
        avg_loss_prev: avg_prev,
        avg_loss_now: avg_now,
        sup_id,
        inf_id_plain,
        inf_id_fair,
        delta: sup_id,
        sigma_fg: sigma_fg_now,
        p_i,
        p_o,
    })
}

/// `mask[i] = losses[i] < delta`.
pub fn identify(losses: &[f64], bounds: &IdentificationBounds) -> Vec<bool> {
    losses.iter().map(|l| *l < bounds.delta).collect()
}

/// How a spectrum of principal cosines collapses to one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaReduction {
    /// Largest cosine.
    #[default]
    Largest,
    /// Mean cosine: the fraction of the smaller row space shared with the
    /// other population, for spectra of zeros and ones.
    Mean,
}

impl SigmaReduction {
    pub fn reduce(self, spectrum: &[f64]) -> f64 {
        if spectrum.is_empty() {
            return 0.0;
        }
        match self {
            SigmaReduction::Largest => spectrum.iter().copied().fold(0.0, f64::max),
            SigmaReduction::Mean => spectrum.iter().sum::<f64>() / spectrum.len() as f64,
        }
    }
}

/// Overlap spectrum between the row spaces of the ID and OOD pools.
///
/// Reads the generator's id_mask, so it belongs to verification only.
pub fn pool_overlap_spectrum(ds: &BiasedDataset) -> Result<Vec<f64>, IdentError> {
    let id = ds.id_x();
    let ood = ds.ood_x();
    if id.nrows() == 0 {
        return Err(IdentError::EmptyPopulation("id"));
    }
    if ood.nrows() == 0 {
        return Err(IdentError::EmptyPopulation("ood"));
    }
    let f = orthonormal_basis(&id)?;
    let g = orthonormal_basis(&ood)?;
    Ok(overlap_spectrum(&f, &g)?)
}

/// Exact σ between the ID and OOD row spaces (ground-truth access).
pub fn estimate_sigma_fg_exact(ds: &BiasedDataset, reduction: SigmaReduction) -> Result<f64, IdentError> {
    Ok(reduction.reduce(&pool_overlap_spectrum(ds)?))
}

/// The σ a training loop may use: a configured prior, never data-derived.
pub fn estimate_sigma_fg_online(prior: f64) -> Result<f64, IdentError> {
    if (0.0..=1.0).contains(&prior) {
        Ok(prior)
    } else {
        Err(IdentError::BadSigma(prior))
    }
}

/// Fraction of flagged instances that are truly ID; `None` when nothing is
/// flagged.
pub fn flag_precision(mask: &[bool], id_mask: &[bool]) -> Option<f64> {
    let flagged = mask.iter().filter(|b| **b).count();
    if flagged == 0 {
        return None;
    }
    let hits = mask.iter().zip(id_mask).filter(|(f, t)| **f && **t).count();
    Some(hits as f64 / flagged as f64)
}
