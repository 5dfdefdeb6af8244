use crate::{canonical_sign, ensure_finite, svd, Matrix, SubspaceError, RANK_TOL, ZERO_TOL};

/// Orthonormal columns spanning a subspace of `R^ambient_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    columns: Matrix,
}

impl SubspaceBasis {
    /// Wraps `columns` after checking `‖BᵀB − I‖_max < 1e-10`.
    pub fn new(columns: Matrix) -> Result<Self, SubspaceError> {
        let b = Self { columns };
        if b.ambient_dim() == 0 {
            return Err(SubspaceError::Empty { rows: 0, cols: b.dim() });
        }
        if !b.columns.iter().all(|v| v.is_finite()) {
            return Err(SubspaceError::NonFinite);
        }
        let err = b.orthonormality_error();
        if err >= 1e-10 {
            return Err(SubspaceError::NotOrthonormal(err));
        }
        Ok(b)
    }

    pub(crate) fn from_columns_unchecked(columns: Matrix) -> Self {
        Self { columns }
    }

    /// An empty (zero-dimensional) subspace of `R^ambient`.
    pub fn empty(ambient: usize) -> Self {
        Self { columns: Matrix::zeros(ambient, 0) }
    }

    pub fn columns(&self) -> &Matrix {
        &self.columns
    }

    pub fn into_columns(self) -> Matrix {
        self.columns
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    /// `‖BᵀB − I‖_max`.
    pub fn orthonormality_error(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        let gram = self.columns.transpose() * &self.columns;
        (gram - Matrix::identity(self.dim(), self.dim())).amax()
    }

    /// The first `k` columns.
    pub fn leading(&self, k: usize) -> Self {
        Self { columns: self.columns.columns(0, k.min(self.dim())).into_owned() }
    }

    /// The columns `from..`.
    pub fn trailing(&self, from: usize) -> Self {
        let from = from.min(self.dim());
        Self { columns: self.columns.columns(from, self.dim() - from).into_owned() }
    }

    /// Orthogonal projector `B·Bᵀ`.
    pub fn projector(&self) -> Matrix {
        &self.columns * self.columns.transpose()
    }

    /// Coordinates of each row of `x` in this basis (`x·B`).
    pub fn coordinates(&self, x: &Matrix) -> Matrix {
        x * &self.columns
    }

    /// Projects every row of `x` onto the subspace (`x·B·Bᵀ`).
    pub fn project_rows(&self, x: &Matrix) -> Matrix {
        (x * &self.columns) * self.columns.transpose()
    }

    /// Concatenates two bases whose spans are mutually orthogonal.
    ///
    /// The result is only orthonormal if the caller's orthogonality claim
    /// holds, so it is re-checked.
    pub fn direct_sum(&self, other: &Self) -> Result<Self, SubspaceError> {
        if self.ambient_dim() != other.ambient_dim() {
            return Err(SubspaceError::DimMismatch {
                left: self.ambient_dim(),
                right: other.ambient_dim(),
            });
        }
        let mut cols = Matrix::zeros(self.ambient_dim(), self.dim() + other.dim());
        cols.columns_mut(0, self.dim()).copy_from(&self.columns);
        cols.columns_mut(self.dim(), other.dim()).copy_from(&other.columns);
        Self::new(cols)
    }
}

/// Orthonormal basis of the row space of `m`.
///
/// Uses Householder QR with column pivoting on `mᵀ`; the rank is the number
/// of diagonal entries of R above `RANK_TOL` times the first. Each column is
/// sign-normalized so its largest-magnitude entry is positive.
pub fn orthonormal_basis(m: &Matrix) -> Result<SubspaceBasis, SubspaceError> {
    ensure_finite(m)?;
    if m.amax() < ZERO_TOL {
        return Err(SubspaceError::ZeroMatrix);
    }
    let qr = m.transpose().col_piv_qr();
    let r = qr.r();
    let diag = r.nrows().min(r.ncols());
    let top = r[(0, 0)].abs();
    let rank = (0..diag).take_while(|&i| r[(i, i)].abs() > RANK_TOL * top).count();
    let q = qr.q();
    let mut cols = q.columns(0, rank).into_owned();
    normalize_signs(&mut cols);
    Ok(SubspaceBasis::from_columns_unchecked(cols))
}

/// Right singular directions of `m` whose singular value is at least
/// `rel_tol` times the largest.
///
/// With `rel_tol = RANK_TOL` this is the numerical row space; larger values
/// keep only the principal part, discarding directions excited by a handful
/// of rows.
pub fn principal_row_basis(m: &Matrix, rel_tol: f64) -> Result<SubspaceBasis, SubspaceError> {
    ensure_finite(m)?;
    if m.amax() < ZERO_TOL {
        return Err(SubspaceError::ZeroMatrix);
    }
    let d = svd(m);
    let top = d.singular_values[0];
    let keep = d
        .singular_values
        .iter()
        .take_while(|s| **s >= rel_tol.max(RANK_TOL) * top)
        .count();
    let mut cols = d.right.columns().columns(0, keep).into_owned();
    normalize_signs(&mut cols);
    Ok(SubspaceBasis::from_columns_unchecked(cols))
}

/// Singular values of `aᵀb`: cosines of the principal angles, descending.
pub fn overlap_spectrum(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<Vec<f64>, SubspaceError> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(SubspaceError::DimMismatch {
            left: a.ambient_dim(),
            right: b.ambient_dim(),
        });
    }
    if a.dim() == 0 || b.dim() == 0 {
        return Ok(Vec::new());
    }
    let cross = a.columns().transpose() * b.columns();
    // Rounding can push a cosine a hair above one.
    Ok(svd(&cross).singular_values.into_iter().map(|s| s.min(1.0)).collect())
}

fn normalize_signs(cols: &mut Matrix) {
    for mut col in cols.column_iter_mut() {
        let v: Vec<f64> = col.iter().copied().collect();
        let s = canonical_sign(&v);
        col.scale_mut(s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_identity_basis() {
        let b = orthonormal_basis(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(b.dim(), 3);
        assert!((b.columns() - Matrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn single_row_normalizes() {
        let b = orthonormal_basis(&Matrix::from_row_slice(1, 3, &[2.0, 0.0, 0.0])).unwrap();
        assert_eq!(b.dim(), 1);
        assert!((b.columns()[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(b.columns()[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn zero_input_is_rejected() {
        assert_eq!(orthonormal_basis(&Matrix::zeros(2, 2)), Err(SubspaceError::ZeroMatrix));
    }

    #[test]
    fn rank_deficient_rows_collapse() {
        let m = Matrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(orthonormal_basis(&m).unwrap().dim(), 2);
    }

    #[test]
    fn overlap_of_identical_and_orthogonal() {
        let e = orthonormal_basis(&Matrix::identity(3, 3)).unwrap();
        let spectrum = overlap_spectrum(&e, &e).unwrap();
        assert!(spectrum.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let x = SubspaceBasis::new(Matrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let y = SubspaceBasis::new(Matrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])).unwrap();
        assert!(overlap_spectrum(&x, &y).unwrap()[0].abs() < 1e-12);
        let z = SubspaceBasis::new(Matrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!(matches!(overlap_spectrum(&x, &z), Err(SubspaceError::DimMismatch { .. })));
    }

    #[test]
    fn principal_basis_drops_weak_rows() {
        let mut m = Matrix::zeros(101, 3);
        for i in 0..100 {
            m[(i, 0)] = 1.0;
        }
        m[(100, 2)] = 1.0;
        assert_eq!(principal_row_basis(&m, RANK_TOL).unwrap().dim(), 2);
        assert_eq!(principal_row_basis(&m, 0.5).unwrap().dim(), 1);
    }
}
