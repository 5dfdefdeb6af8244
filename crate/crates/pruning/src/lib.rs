//! Spurious-targeted sparsification of a linear feature extractor.
//!
//! The flagged (ID-suspected) instances are pushed through the model and the
//! resulting projection matrix is decomposed. Its weakest left singular
//! directions are the model-space directions that the flagged data barely
//! excites; pruning removes the model's action along them, restricted to the
//! flagged data's principal span so directions the flagged set never sees are
//! left alone.

mod gap;
mod saliency;

pub use gap::{direction_energy, risk_gap, risk_gap_ratio, RiskGap};
pub use saliency::SaliencyVector;

use serde::{Deserialize, Serialize};
use subspace_core::{principal_row_basis, svd, Matrix, SubspaceBasis};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PruneError {
    #[error("x has {x} columns but w has {w}")]
    ShapeMismatch { x: usize, w: usize },
    #[error("flagged set is empty")]
    EmptyFlagSet,
    #[error("energy_keep {0} outside (0, 1]")]
    BadEnergy(f64),
    #[error("keep {keep} outside 1..={max}")]
    BadRank { keep: usize, max: usize },
    #[error("pruned gap {0:e} is below 1e-12; ratio is unbounded")]
    DegenerateGap(f64),
    #[error("saliency gate {0} outside [0, 1] or all gates zero")]
    BadSaliency(f64),
    #[error(transparent)]
    Subspace(#[from] subspace_core::SubspaceError),
}

/// `x·wᵀ`, each output channel scaled by its gate when gates are present.
pub fn project_features(
    w: &Matrix,
    saliency: Option<&SaliencyVector>,
    x: &Matrix,
) -> Result<Matrix, PruneError> {
    if x.ncols() != w.ncols() {
        return Err(PruneError::ShapeMismatch { x: x.ncols(), w: w.ncols() });
    }
    let mut r = x * w.transpose();
    if let Some(s) = saliency {
        if s.len() != w.nrows() {
            return Err(PruneError::ShapeMismatch { x: s.len(), w: w.nrows() });
        }
        for (j, g) in s.gates().iter().enumerate() {
            r.column_mut(j).scale_mut(*g);
        }
    }
    Ok(r)
}

/// Where the removal of dropped directions acts in input space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SpanRestriction {
    /// Remove the dropped directions from `w` everywhere.
    Unrestricted,
    /// Remove them only on the flagged rows' principal span: directions whose
    /// singular value is at least `rel_tol` times the largest.
    Principal { rel_tol: f64 },
}

impl Default for SpanRestriction {
    fn default() -> Self {
        SpanRestriction::Principal { rel_tol: 0.5 }
    }
}

/// Outcome of one prune event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub kept_rank: usize,
    pub singular_values: Vec<f64>,
    pub dropped_singulars: Vec<f64>,
    /// Dimension of the flagged span the removal acted on.
    pub span_dim: usize,
    pub pre_spurious_energy: Option<f64>,
    pub post_spurious_energy: Option<f64>,
    pub pre_invariant_energy: Option<f64>,
    pub post_invariant_energy: Option<f64>,
    pub risk_gap: Option<RiskGap>,
}

impl PruneReport {
    /// Fills the ground-truth fields: response energy along F′ and IN on the
    /// ID rows, and the risk-gap ratio of full versus pruned model.
    pub fn annotate(
        &mut self,
        full: (&Matrix, Option<&SaliencyVector>),
        pruned: (&Matrix, Option<&SaliencyVector>),
        ds: &dataset_gen::BiasedDataset,
    ) -> Result<(), PruneError> {
        let id = ds.id_x();
        if id.nrows() > 0 {
            self.pre_spurious_energy = Some(direction_energy(full.0, full.1, &id, &ds.split.spurious)?);
            self.post_spurious_energy = Some(direction_energy(pruned.0, pruned.1, &id, &ds.split.spurious)?);
            self.pre_invariant_energy = Some(direction_energy(full.0, full.1, &id, &ds.split.invariant)?);
            self.post_invariant_energy = Some(direction_energy(pruned.0, pruned.1, &id, &ds.split.invariant)?);
        }
        self.risk_gap = Some(risk_gap(full, pruned, ds)?);
        Ok(())
    }
}

/// Minimal count of leading singular values whose squared mass reaches
/// `energy_keep` of the total. Zero spectra keep nothing.
pub fn rank_for_energy(singular_values: &[f64], energy_keep: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc >= (energy_keep - 1e-12) * total {
            return i + 1;
        }
    }
    singular_values.len()
}

struct Plan {
    decomposition_left: Matrix,
    singular_values: Vec<f64>,
    span: SubspaceBasis,
}

fn plan(w: &Matrix, flagged_x: &Matrix, restriction: SpanRestriction) -> Result<Plan, PruneError> {
    if flagged_x.nrows() == 0 {
        return Err(PruneError::EmptyFlagSet);
    }
    if flagged_x.ncols() != w.ncols() {
        return Err(PruneError::ShapeMismatch { x: flagged_x.ncols(), w: w.ncols() });
    }
    let rel_tol = match restriction {
        SpanRestriction::Unrestricted => subspace_core::RANK_TOL,
        SpanRestriction::Principal { rel_tol } => rel_tol,
    };
    let span = principal_row_basis(flagged_x, rel_tol)?;
    // Decompose the model's action on the principal part of the flagged rows.
    let projection = w * span.projector() * flagged_x.transpose();
    let full = svd(&projection);
    let mut left = Matrix::zeros(w.nrows(), w.nrows());
    let k = full.len();
    left.columns_mut(0, k).copy_from(full.left.columns());
    if k < w.nrows() {
        // Complete the left basis so directions with no flagged response are
        // available for removal too.
        let comp = orthogonal_complement(full.left.columns());
        left.columns_mut(k, w.nrows() - k).copy_from(&comp);
    }
    let mut values = full.singular_values;
    values.resize(w.nrows(), 0.0);
    Ok(Plan { decomposition_left: left, singular_values: values, span })
}

fn orthogonal_complement(cols: &Matrix) -> Matrix {
    let m = cols.nrows();
    let k = cols.ncols();
    let residual = Matrix::identity(m, m) - cols * cols.transpose();
    let d = svd(&residual);
    d.left.columns().columns(0, m - k).into_owned()
}

fn apply(w: &Matrix, plan: &Plan, kept: usize, restriction: SpanRestriction) -> Matrix {
    let m = w.nrows();
    if kept >= m {
        return w.clone();
    }
    let dropped = plan.decomposition_left.columns(kept, m - kept).into_owned();
    let along = dropped.transpose() * w;
    match restriction {
        SpanRestriction::Unrestricted => w - &dropped * along,
        SpanRestriction::Principal { .. } => w - &dropped * (along * plan.span.projector()),
    }
}

/// Truncates the flagged projection to the minimal rank carrying
/// `energy_keep` of its squared singular mass and removes the model's action
/// along the dropped left singular directions.
///
/// Gates, when present, are scaled by the fraction of their channel's flagged
/// response energy that survives.
pub fn prune_by_svd(
    w: &Matrix,
    saliency: Option<&SaliencyVector>,
    flagged_x: &Matrix,
    energy_keep: f64,
    restriction: SpanRestriction,
) -> Result<(Matrix, Option<SaliencyVector>, PruneReport), PruneError> {
    if !(energy_keep > 0.0 && energy_keep <= 1.0) {
        return Err(PruneError::BadEnergy(energy_keep));
    }
    let p = plan(w, flagged_x, restriction)?;
    let rank = p.singular_values.iter().filter(|s| **s > subspace_core::RANK_TOL * p.singular_values[0]).count();
    let kept = if energy_keep >= 1.0 {
        // Nothing is truncated; the model stays bit-identical.
        rank.max(1)
    } else {
        rank_for_energy(&p.singular_values, energy_keep).max(1)
    };
    let pruned = if energy_keep >= 1.0 { w.clone() } else { apply(w, &p, kept, restriction) };
    finish(w, saliency, flagged_x, pruned, p, kept)
}

/// Same removal with an explicit retained rank instead of an energy target.
pub fn prune_to_rank(
    w: &Matrix,
    saliency: Option<&SaliencyVector>,
    flagged_x: &Matrix,
    keep: usize,
    restriction: SpanRestriction,
) -> Result<(Matrix, Option<SaliencyVector>, PruneReport), PruneError> {
    if keep == 0 || keep > w.nrows() {
        return Err(PruneError::BadRank { keep, max: w.nrows() });
    }
    let p = plan(w, flagged_x, restriction)?;
    let pruned = apply(w, &p, keep, restriction);
    finish(w, saliency, flagged_x, pruned, p, keep)
}

fn finish(
    w: &Matrix,
    saliency: Option<&SaliencyVector>,
    flagged_x: &Matrix,
    pruned: Matrix,
    p: Plan,
    kept: usize,
) -> Result<(Matrix, Option<SaliencyVector>, PruneReport), PruneError> {
    let gates = match saliency {
        Some(s) => Some(s.attenuated(&(flagged_x * w.transpose()), &(flagged_x * pruned.transpose()))?),
        None => None,
    };
    let kept_in_spectrum = kept.min(p.singular_values.len());
    let report = PruneReport {
        kept_rank: kept,
        dropped_singulars: p.singular_values[kept_in_spectrum..].to_vec(),
        singular_values: p.singular_values,
        span_dim: p.span.dim(),
        pre_spurious_energy: None,
        post_spurious_energy: None,
        pre_invariant_energy: None,
        post_invariant_energy: None,
        risk_gap: None,
    };
    Ok((pruned, gates, report))
}

/// Zeroes the `m − keep` rows of `w` with the smallest Euclidean norm
/// (ties broken toward the later row).
pub fn magnitude_prune(w: &Matrix, keep: usize) -> Result<Matrix, PruneError> {
    let m = w.nrows();
    if keep == 0 || keep > m {
        return Err(PruneError::BadRank { keep, max: m });
    }
    let mut order: Vec<usize> = (0..m).collect();
    let norms: Vec<f64> = (0..m).map(|i| w.row(i).norm()).collect();
    order.sort_by(|a, b| norms[*a].total_cmp(&norms[*b]).then(b.cmp(a)));
    let mut out = w.clone();
    for &i in &order[..m - keep] {
        out.row_mut(i).fill(0.0);
    }
    Ok(out)
}
