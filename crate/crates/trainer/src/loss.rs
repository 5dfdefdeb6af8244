use dataset_gen::BiasedDataset;
use subspace_core::Matrix;

use crate::{EtaMode, LossKind, ModelState, PenaltyNorm, TrainError};

fn check_shapes(state: &ModelState, x: &Matrix, y: &Matrix) -> Result<(), TrainError> {
    if x.ncols() != state.d() || y.nrows() != x.nrows() || y.ncols() != state.m() {
        return Err(TrainError::ShapeMismatch(format!(
            "w is {}×{}, x is {}×{}, y is {}×{}",
            state.m(),
            state.d(),
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(())
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for mut row in p.row_iter_mut() {
        let top = row.max();
        row.apply(|v| *v = (*v - top).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

/// Derivative of the per-instance loss with respect to the response:
/// `f − y` for squared loss (without the factor 2), `softmax(f) − y` for
/// cross-entropy.
pub fn residual(state: &ModelState, x: &Matrix, y: &Matrix, kind: LossKind) -> Result<Matrix, TrainError> {
    check_shapes(state, x, y)?;
    let f = state.response(x)?;
    Ok(match kind {
        LossKind::Squared => f - y,
        LossKind::CrossEntropy => softmax_rows(&f) - y,
    })
}

pub fn per_instance_losses(state: &ModelState, x: &Matrix, y: &Matrix, kind: LossKind) -> Result<Vec<f64>, TrainError> {
    check_shapes(state, x, y)?;
    let f = state.response(x)?;
    Ok(match kind {
        LossKind::Squared => (0..x.nrows()).map(|i| (f.row(i) - y.row(i)).norm_squared()).collect(),
        LossKind::CrossEntropy => (0..x.nrows())
            .map(|i| {
                let row = f.row(i);
                let top = row.max();
                let log_z = top + row.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
                row.iter().zip(y.row(i).iter()).map(|(v, t)| t * (log_z - v)).sum()
            })
            .collect(),
    })
}

/// Mean squared error `‖x·wᵀ − y‖²_F / n`.
pub fn task_loss(state: &ModelState, x: &Matrix, y: &Matrix) -> Result<f64, TrainError> {
    let l = per_instance_losses(state, x, y, LossKind::Squared)?;
    Ok(mean(&l))
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Chain rule through the gates: `diag(g)·Gᵀ·x / n` for response-gradient `G`.
fn pull_back(state: &ModelState, mut g_resp: Matrix, x: &Matrix, denom: f64) -> Matrix {
    if let Some(s) = &state.saliency {
        for (j, g) in s.gates().iter().enumerate() {
            g_resp.column_mut(j).scale_mut(*g);
        }
    }
    g_resp.transpose() * x / denom
}

/// Gradient of [`task_loss`] with respect to `w`: `2·(f − y)ᵀ·x / n`.
pub fn gradient(state: &ModelState, x: &Matrix, y: &Matrix) -> Result<Matrix, TrainError> {
    loss_gradient(state, x, y, LossKind::Squared)
}

pub(crate) fn loss_gradient(state: &ModelState, x: &Matrix, y: &Matrix, kind: LossKind) -> Result<Matrix, TrainError> {
    let r = residual(state, x, y, kind)?;
    let scale = match kind {
        LossKind::Squared => 2.0,
        LossKind::CrossEntropy => 1.0,
    };
    Ok(pull_back(state, r * scale, x, x.nrows().max(1) as f64))
}

/// Task gradient plus the subgradient of `η·Σ_flagged ‖f(x)‖₁ / den`.
///
/// With no flagged instance this is exactly the task gradient.
pub fn penalized_gradient(
    state: &ModelState,
    x: &Matrix,
    y: &Matrix,
    flagged: &[bool],
    eta: f64,
    norm: PenaltyNorm,
    kind: LossKind,
) -> Result<Matrix, TrainError> {
    let mut grad = loss_gradient(state, x, y, kind)?;
    if flagged.len() != x.nrows() {
        return Err(TrainError::ShapeMismatch(format!("mask has {} entries for {} rows", flagged.len(), x.nrows())));
    }
    let rows: Vec<usize> = (0..x.nrows()).filter(|i| flagged[*i]).collect();
    if rows.is_empty() || eta == 0.0 {
        return Ok(grad);
    }
    let xf = x.select_rows(&rows);
    let sign = state.response(&xf)?.map(f64::signum);
    let den = match norm {
        PenaltyNorm::Flagged => rows.len(),
        PenaltyNorm::Batch => x.nrows(),
    } as f64;
    grad += pull_back(state, sign, &xf, den) * eta;
    Ok(grad)
}

/// Gradient split by population and by the population's own span.
///
/// `id_term` is the ID rows' contribution restricted to IN ⊕ F′, `ood_term`
/// the OOD rows' contribution restricted to IN ⊕ G′; `cross_residual` is
/// everything else and vanishes when the rows respect the split.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedGradient {
    pub id_term: Matrix,
    pub ood_term: Matrix,
    pub cross_residual: Matrix,
}

pub fn gradient_decomposed(state: &ModelState, ds: &BiasedDataset) -> Result<DecomposedGradient, TrainError> {
    let total = gradient(state, &ds.x, &ds.y)?;
    let n = ds.n() as f64;
    let part = |want: bool, proj: Matrix| -> Result<Matrix, TrainError> {
        let idx = ds.indices(want);
        if idx.is_empty() {
            return Ok(Matrix::zeros(state.m(), state.d()));
        }
        let x = ds.x.select_rows(&idx);
        let y = ds.y.select_rows(&idx);
        let r = residual(state, &x, &y, LossKind::Squared)? * 2.0;
        Ok(pull_back(state, r, &(x * proj), n))
    };
    let id_term = part(true, ds.split.id_basis().projector())?;
    let ood_term = part(false, ds.split.ood_basis().projector())?;
    let cross_residual = &total - &id_term - &ood_term;
    Ok(DecomposedGradient { id_term, ood_term, cross_residual })
}

/// η for the flagged instances. `Auto2e` uses e = mean over instances of the
/// mean absolute per-dimension residual between target and response.
pub fn compute_eta(
    state: &ModelState,
    flagged_x: &Matrix,
    flagged_y: &Matrix,
    mode: EtaMode,
    kind: LossKind,
) -> Result<f64, TrainError> {
    if flagged_x.nrows() == 0 {
        return Err(TrainError::EmptyFlagSet);
    }
    match mode {
        EtaMode::Fixed { value } => Ok(value),
        EtaMode::Auto2e { factor } => {
            let r = residual(state, flagged_x, flagged_y, kind)?;
            let e = r.iter().map(|v| v.abs()).sum::<f64>() / (r.nrows() * r.ncols()) as f64;
            Ok(factor * 2.0 * e)
        }
    }
}

/// Fraction of rows whose argmax response matches the label.
pub fn accuracy(state: &ModelState, x: &Matrix, labels: &[usize]) -> Result<f64, TrainError> {
    let f = state.response(x)?;
    if labels.len() != f.nrows() {
        return Err(TrainError::ShapeMismatch(format!("{} labels for {} rows", labels.len(), f.nrows())));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = f.row_iter().zip(labels).filter(|(row, l)| row.transpose().argmax().0 == **l).count();
    Ok(hits as f64 / labels.len() as f64)
}
