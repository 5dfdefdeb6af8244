//! Dense linear-algebra substrate for the lab.
//!
//! Everything here is a pure function over `nalgebra` matrices. The one
//! thing the rest of the workspace relies on beyond raw numerics is
//! reproducibility: singular vectors come out sorted and sign-normalized, so
//! two runs over the same input produce the same bits.

mod basis;
mod decomposition;

pub use basis::{orthonormal_basis, overlap_spectrum, principal_row_basis, SubspaceBasis};
pub use decomposition::{svd, truncated_svd, ProjectionDecomposition};

/// Dense real matrix used throughout the workspace.
pub type Matrix = nalgebra::DMatrix<f64>;

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Entries below this magnitude count as zero when rejecting empty input.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubspaceError {
    #[error("matrix has no entry above {ZERO_TOL:e} in magnitude")]
    ZeroMatrix,
    #[error("requested rank {keep} outside 1..={max}")]
    BadRank { keep: usize, max: usize },
    #[error("ambient dimensions differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("matrix contains a non-finite entry")]
    NonFinite,
    #[error("columns deviate from orthonormal by {0:e}")]
    NotOrthonormal(f64),
    #[error("matrix has an empty dimension ({rows}x{cols})")]
    Empty { rows: usize, cols: usize },
}

/// Rejects empty shapes and NaN/Inf entries.
pub fn ensure_finite(m: &Matrix) -> Result<(), SubspaceError> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(SubspaceError::Empty {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SubspaceError::NonFinite)
    }
}

/// Flips `col` so that its largest-magnitude entry is positive.
///
/// Ties resolve to the first index, which keeps the rule deterministic.
/// Returns the sign that was applied.
pub(crate) fn canonical_sign(col: &[f64]) -> f64 {
    let mut best = 0usize;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    if col.get(best).copied().unwrap_or(0.0) < 0.0 {
        -1.0
    } else {
        1.0
    }
}
