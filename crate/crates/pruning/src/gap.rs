use dataset_gen::BiasedDataset;
use serde::{Deserialize, Serialize};
use subspace_core::{Matrix, SubspaceBasis};

use crate::{project_features, PruneError, SaliencyVector};

/// Gaps listed below are `mean_OOD ‖r − y‖ − mean_ID ‖r − y‖` for response `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskGap {
    pub gap_full: f64,
    pub gap_pruned: f64,
    /// `|gap_full| / |gap_pruned|`; `+∞` when degenerate.
    pub ratio: f64,
    pub degenerate: bool,
    /// Norm of the difference between mean OOD and mean ID responses.
    pub raw_full: f64,
    pub raw_pruned: f64,
}

/// Mean squared norm of the response to the rows of `x` projected onto
/// `basis`.
pub fn direction_energy(
    w: &Matrix,
    saliency: Option<&SaliencyVector>,
    x: &Matrix,
    basis: &SubspaceBasis,
) -> Result<f64, PruneError> {
    if x.nrows() == 0 {
        return Ok(0.0);
    }
    let r = project_features(w, saliency, &basis.project_rows(x))?;
    Ok(r.norm_squared() / x.nrows() as f64)
}

fn discrepancy_gap(w: &Matrix, s: Option<&SaliencyVector>, ds: &BiasedDataset) -> Result<(f64, f64), PruneError> {
    let r = project_features(w, s, &ds.x)?;
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    let mut mean_resp = [Matrix::zeros(1, r.ncols()), Matrix::zeros(1, r.ncols())];
    for i in 0..ds.n() {
        let k = usize::from(!ds.id_mask[i]);
        sums[k] += (r.row(i) - ds.y.row(i)).norm();
        counts[k] += 1;
        mean_resp[k] += r.row(i);
    }
    let mean = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
    for (k, m) in mean_resp.iter_mut().enumerate() {
        if counts[k] > 0 {
            *m /= counts[k] as f64;
        }
    }
    Ok((mean(1) - mean(0), (&mean_resp[1] - &mean_resp[0]).norm()))
}

/// Risk gap of the full model relative to the pruned model.
pub fn risk_gap(
    full: (&Matrix, Option<&SaliencyVector>),
    pruned: (&Matrix, Option<&SaliencyVector>),
    ds: &BiasedDataset,
) -> Result<RiskGap, PruneError> {
    let (gap_full, raw_full) = discrepancy_gap(full.0, full.1, ds)?;
    let (gap_pruned, raw_pruned) = discrepancy_gap(pruned.0, pruned.1, ds)?;
    let degenerate = gap_pruned.abs() < 1e-12;
    let ratio = if degenerate { f64::INFINITY } else { gap_full.abs() / gap_pruned.abs() };
    Ok(RiskGap { gap_full, gap_pruned, ratio, degenerate, raw_full, raw_pruned })
}

/// Scalar form of [`risk_gap`]; a vanishing pruned gap is an error.
pub fn risk_gap_ratio(
    full: (&Matrix, Option<&SaliencyVector>),
    pruned: (&Matrix, Option<&SaliencyVector>),
    ds: &BiasedDataset,
) -> Result<f64, PruneError> {
    let g = risk_gap(full, pruned, ds)?;
    if g.degenerate {
        Err(PruneError::DegenerateGap(g.gap_pruned))
    } else {
        Ok(g.ratio)
    }
}
