use dataset_gen::BiasedDataset;
use pruning::{direction_energy, SaliencyVector};
use subspace_core::{Matrix, SubspaceBasis};
use trainer::{gradient, ModelState, TrainingTrace};

use crate::VerifyError;

/// Per-unit gradient magnitudes along F′ and G′ at one parameter value.
///
/// With `Δ = w − W*`, `rate_f = ‖∇·F′‖ / ‖Δ·F′‖` and likewise for G′, so the
/// figures do not depend on how far training has progressed along each split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalRates {
    pub rate_f: f64,
    pub rate_g: f64,
    pub update_f: f64,
    pub update_g: f64,
}

pub fn directional_rates(state: &ModelState, ds: &BiasedDataset) -> Result<Option<DirectionalRates>, VerifyError> {
    let grad = gradient(state, &ds.x, &ds.y)?;
    let delta = &state.w - &ds.truth.w_star;
    let sp = ds.split.spurious.columns();
    let un = ds.split.unknown.columns();
    let (df, dg) = ((&delta * sp).norm(), (&delta * un).norm());
    if df < 1e-12 || dg < 1e-12 {
        return Ok(None);
    }
    let (uf, ug) = ((&grad * sp).norm(), (&grad * un).norm());
    Ok(Some(DirectionalRates { rate_f: uf / df, rate_g: ug / dg, update_f: uf, update_g: ug }))
}

/// Mean eigenvalue of a population's second moment restricted to `basis`,
/// i.e. σ² of the population along those directions. Empty populations give 0.
pub fn population_spectrum(ds: &BiasedDataset, id_population: bool, basis: &SubspaceBasis) -> f64 {
    let idx = ds.indices(id_population);
    if idx.is_empty() || basis.dim() == 0 {
        return 0.0;
    }
    let coords = basis.coordinates(&ds.x.select_rows(&idx));
    coords.norm_squared() / (idx.len() * basis.dim()) as f64
}

/// Pearson correlation between the model's and the truth's responses to the
/// invariant component of every row.
pub fn invariant_fidelity(w: &Matrix, saliency: Option<&SaliencyVector>, ds: &BiasedDataset) -> Result<f64, VerifyError> {
    let x_in = ds.split.invariant.project_rows(&ds.x);
    let a = pruning::project_features(w, saliency, &x_in)?;
    let b = ds.truth_response(&x_in);
    Ok(pearson(a.as_slice(), b.as_slice()))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Mean squared response to the F′ component of the ID rows.
pub fn spurious_energy(w: &Matrix, saliency: Option<&SaliencyVector>, ds: &BiasedDataset) -> Result<f64, VerifyError> {
    Ok(direction_energy(w, saliency, &ds.id_x(), &ds.split.spurious)?)
}

/// Relative invariant-fidelity loss caused by each prune event of a trace.
pub fn prune_fidelity_drops(trace: &TrainingTrace, ds: &BiasedDataset) -> Result<Vec<f64>, VerifyError> {
    let gates = |g: &Option<Vec<f64>>| g.as_ref().map(|v| SaliencyVector::new(v.clone())).transpose();
    trace
        .prune_events
        .iter()
        .map(|e| {
            let before = invariant_fidelity(&e.w_before, gates(&e.gates_before)?.as_ref(), ds)?;
            let after = invariant_fidelity(&e.w_after, gates(&e.gates_after)?.as_ref(), ds)?;
            Ok((before - after) / before.abs().max(1e-12))
        })
        .collect()
}

/// Feature-projection error `‖target − x·wᵀ‖²` of one instance.
pub fn feature_projection_error(w: &Matrix, x: &Matrix, target: &Matrix) -> f64 {
    (target - x * w.transpose()).norm_squared()
}

/// Its gradient in `w`, `−2·eᵀ·x` with residual `e = target − x·wᵀ`: the
/// direction of the instance scaled by twice the residual.
pub fn feature_projection_gradient(w: &Matrix, x: &Matrix, target: &Matrix) -> Matrix {
    let e = target - x * w.transpose();
    e.transpose() * x * -2.0
}
