use crate::{canonical_sign, ensure_finite, Matrix, SubspaceBasis, SubspaceError};

/// Compact SVD `source = left · diag(singular_values) · rightᵀ`.
///
/// Singular values are non-increasing. Each left singular vector has its
/// largest-magnitude entry positive; the matching right vector is flipped with
/// it so the product is unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionDecomposition {
    pub left: SubspaceBasis,
    pub right: SubspaceBasis,
    pub singular_values: Vec<f64>,
    pub source_shape: (usize, usize),
}

impl ProjectionDecomposition {
    pub fn len(&self) -> usize {
        self.singular_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.singular_values.is_empty()
    }

    /// `left · diag(σ) · rightᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.left.columns().clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * self.right.columns().transpose()
    }

    /// Number of singular values above `RANK_TOL` times the largest.
    pub fn numerical_rank(&self) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        if top <= 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|s| **s > crate::RANK_TOL * top)
            .count()
    }

    /// Sum of squared singular values.
    pub fn energy(&self) -> f64 {
        self.singular_values.iter().map(|s| s * s).sum()
    }
}

/// Full compact SVD with sorted values and the canonical sign convention.
///
/// A zero matrix is accepted and yields all-zero singular values.
pub fn svd(m: &Matrix) -> ProjectionDecomposition {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return ProjectionDecomposition {
            left: SubspaceBasis::from_columns_unchecked(Matrix::zeros(rows, 0)),
            right: SubspaceBasis::from_columns_unchecked(Matrix::zeros(cols, 0)),
            singular_values: Vec::new(),
            source_shape: (rows, cols),
        };
    }
    let (u, values, v_t) = match bidiagonal_svd(m) {
        Some(parts) => parts,
        None => jacobi_svd(m),
    };

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| values[*b].total_cmp(&values[*a]).then(a.cmp(b)));

    let mut left = Matrix::zeros(rows, k);
    let mut right = Matrix::zeros(cols, k);
    let mut sorted = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let ucol: Vec<f64> = u.column(src).iter().copied().collect();
        let sign = canonical_sign(&ucol);
        for i in 0..rows {
            left[(i, dst)] = sign * ucol[i];
        }
        for j in 0..cols {
            right[(j, dst)] = sign * v_t[(src, j)];
        }
        sorted.push(values[src].max(0.0));
    }
    ProjectionDecomposition {
        left: SubspaceBasis::from_columns_unchecked(left),
        right: SubspaceBasis::from_columns_unchecked(right),
        singular_values: sorted,
        source_shape: (rows, cols),
    }
}

type RawSvd = (Matrix, Vec<f64>, Matrix);

/// nalgebra's Golub–Kahan SVD, accepted only if it actually reconstructs `m`
/// with orthonormal factors. It occasionally stalls on rank-deficient square
/// inputs and returns a visibly wrong factorization.
fn bidiagonal_svd(m: &Matrix) -> Option<RawSvd> {
    let raw = nalgebra::linalg::SVD::new(m.clone(), true, true);
    let u = raw.u?;
    let v_t = raw.v_t?;
    let values: Vec<f64> = raw.singular_values.iter().copied().collect();
    let mut scaled = u.clone();
    for (j, s) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    let scale = m.amax().max(1.0);
    let k = values.len();
    let eye = Matrix::identity(k, k);
    let ok = (&scaled * &v_t - m).amax() <= 1e-11 * scale
        && (u.transpose() * &u - &eye).amax() <= 1e-11
        && (&v_t * v_t.transpose() - &eye).amax() <= 1e-11;
    ok.then_some((u, values, v_t))
}

/// One-sided (Hestenes) Jacobi SVD. Slower but unconditionally accurate;
/// used when the bidiagonal path fails its self-check.
fn jacobi_svd(m: &Matrix) -> RawSvd {
    if m.nrows() < m.ncols() {
        let (u, s, v_t) = jacobi_svd(&m.transpose());
        return (v_t.transpose(), s, u.transpose());
    }
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut v = Matrix::identity(cols, cols);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let values: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let top = values.iter().copied().fold(0.0, f64::max);
    let mut u = Matrix::zeros(rows, cols);
    let mut filled = vec![false; cols];
    for j in 0..cols {
        if values[j] > crate::ZERO_TOL * top.max(f64::MIN_POSITIVE) {
            u.set_column(j, &(a.column(j) / values[j]));
            filled[j] = true;
        }
    }
    // Complete the left factor for null singular values by Gram–Schmidt over
    // the standard basis.
    let mut candidate = 0;
    for j in 0..cols {
        if filled[j] {
            continue;
        }
        while candidate < rows {
            let mut e = Matrix::zeros(rows, 1);
            e[(candidate, 0)] = 1.0;
            candidate += 1;
            for _pass in 0..2 {
                for k in (0..cols).filter(|k| filled[*k]) {
                    let proj = u.column(k).dot(&e.column(0));
                    e -= u.column(k) * proj;
                }
            }
            let norm = e.norm();
            if norm > 1e-6 {
                u.set_column(j, &(e.column(0) / norm));
                filled[j] = true;
                break;
            }
        }
    }
    (u, values, v.transpose())
}

/// Keeps the `keep` leading singular triplets, i.e. the best rank-`keep`
/// approximation in Frobenius norm.
pub fn truncated_svd(m: &Matrix, keep: usize) -> Result<ProjectionDecomposition, SubspaceError> {
    ensure_finite(m)?;
    let max = m.nrows().min(m.ncols());
    if keep == 0 || keep > max {
        return Err(SubspaceError::BadRank { keep, max });
    }
    let full = svd(m);
    Ok(ProjectionDecomposition {
        left: full.left.leading(keep),
        right: full.right.leading(keep),
        singular_values: full.singular_values[..keep].to_vec(),
        source_shape: full.source_shape,
    })
}
