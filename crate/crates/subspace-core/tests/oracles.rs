//! Cross-checks against independent algorithms: a cyclic Jacobi eigen
//! solver written here, Gram-matrix principal angles, and least squares.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use subspace_core::{
    orthonormal_basis, overlap_spectrum, svd, truncated_svd, Matrix, SubspaceBasis,
};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
fn jacobi_eigenvalues(sym: &Matrix) -> Vec<f64> {
    let n = sym.nrows();
    let mut a = sym.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

fn random_basis(ambient: usize, dim: usize, seed: u64) -> SubspaceBasis {
    orthonormal_basis(&gaussian(dim, ambient, seed)).unwrap()
}

#[test]
fn singular_values_match_jacobi_eigenvalues_of_gram() {
    for seed in 0..10 {
        let m = gaussian(4, 6, seed);
        let eig = jacobi_eigenvalues(&(&m * m.transpose()));
        let d = svd(&m);
        assert_eq!(d.singular_values.len(), 4);
        for (s, e) in d.singular_values.iter().zip(eig) {
            assert!((s - e.max(0.0).sqrt()).abs() < 1e-8, "seed {seed}: {s} vs {e}");
        }
    }
}

#[test]
fn isometry_has_unit_spectrum() {
    let b = random_basis(7, 3, 11);
    for s in svd(b.columns()).singular_values {
        assert!((s - 1.0).abs() < 1e-10);
    }
}

#[test]
fn rank_three_rows_reproduced_by_least_squares_coordinates() {
    let m = gaussian(5, 3, 3);
    let b = orthonormal_basis(&m).unwrap();
    assert_eq!(b.dim(), 3);
    let cols = b.columns();
    let normal = cols.transpose() * cols;
    let lu = normal.lu();
    for i in 0..m.nrows() {
        let row = m.row(i).transpose();
        let coords = lu.solve(&(cols.transpose() * &row)).unwrap();
        assert!((cols * coords - row).amax() < 1e-8);
    }
}

#[test]
fn truncation_error_matches_dropped_singular_mass() {
    let m = gaussian(6, 6, 21);
    let full = svd(&m);
    let t = truncated_svd(&m, 3).unwrap();
    let expected = full.singular_values[3..].iter().map(|s| s * s).sum::<f64>().sqrt();
    assert!(((&m - t.reconstruct()).norm() - expected).abs() < 1e-8);
    let all = truncated_svd(&m, 6).unwrap();
    assert_eq!(all, full);
}

#[test]
fn principal_cosines_match_gram_oracle() {
    for seed in 0..10 {
        let a = random_basis(5, 2, 100 + seed);
        let b = random_basis(5, 2, 200 + seed);
        let cross = a.columns().transpose() * b.columns();
        let gram = &cross * cross.transpose();
        let eig = jacobi_eigenvalues(&gram);
        let spectrum = overlap_spectrum(&a, &b).unwrap();
        for (s, e) in spectrum.iter().zip(eig) {
            assert!((s - e.max(0.0).sqrt()).abs() < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bases_are_orthonormal(rows in 1usize..8, cols in 1usize..9, seed in any::<u64>()) {
        let b = orthonormal_basis(&gaussian(rows, cols, seed)).unwrap();
        prop_assert!(b.orthonormality_error() < 1e-10);
        prop_assert_eq!(b.dim(), rows.min(cols));
        prop_assert_eq!(b.ambient_dim(), cols);
    }

    #[test]
    fn svd_reconstructs_and_sorts(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
        let m = gaussian(rows, cols, seed);
        let d = svd(&m);
        prop_assert!((d.reconstruct() - &m).amax() < 1e-8);
        prop_assert!(d.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(d.singular_values.iter().all(|s| *s >= 0.0));
        prop_assert!(d.left.orthonormality_error() < 1e-10);
        prop_assert!(d.right.orthonormality_error() < 1e-10);
        for col in d.left.columns().column_iter() {
            let big = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            prop_assert!(big > 0.0);
        }
    }

    #[test]
    fn svd_is_bit_deterministic(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
        let m = gaussian(rows, cols, seed);
        prop_assert_eq!(svd(&m), svd(&m));
    }

    #[test]
    fn truncation_beats_random_factorizations(n in 2usize..7, seed in any::<u64>()) {
        let m = gaussian(n, n, seed);
        let keep = 1 + (seed as usize) % (n - 1);
        let best = (&m - truncated_svd(&m, keep).unwrap().reconstruct()).norm();
        for trial in 0..5u64 {
            let left = gaussian(n, keep, seed ^ (trial + 1));
            // Least-squares right factor for the sampled left factor.
            let q = orthonormal_basis(&left.transpose()).unwrap();
            let approx = q.projector() * &m;
            prop_assert!(best <= (&m - approx).norm() + 1e-9);
        }
    }

    #[test]
    fn overlap_values_are_cosines(amb in 3usize..9, da in 1usize..4, db in 1usize..4, seed in any::<u64>()) {
        let a = random_basis(amb, da.min(amb), seed);
        let b = random_basis(amb, db.min(amb), seed.wrapping_add(1));
        let spectrum = overlap_spectrum(&a, &b).unwrap();
        prop_assert_eq!(spectrum.len(), a.dim().min(b.dim()));
        prop_assert!(spectrum.iter().all(|v| (-1e-10..=1.0 + 1e-10).contains(v)));
    }
}

#[test]
fn rank_deficient_square_input_reconstructs() {
    // nalgebra's bidiagonal SVD returns a factorization off by ~5e-3 here.
    let m = Matrix::from_row_slice(
        4,
        4,
        &[
            2.715995477868549, -0.029505429896412985, 0.43213222839133786, 4.394327906593564,
            1.451156599706975, -1.091783242100145, 5.083349687825082, -2.2676427602134606,
            -1.8171463699304806, 0.806060884267836, 2.5801995380356266, 2.110004796033019,
            -3.348796585888467, 0.7805838403927204, 0.5470621016927943, -1.0662410670173132,
        ],
    )
    .transpose();
    let d = svd(&m);
    assert!((d.reconstruct() - &m).amax() < 1e-10);
    assert!(d.left.orthonormality_error() < 1e-10);
    assert!(d.right.orthonormality_error() < 1e-10);
    assert!(d.singular_values[3] < 1e-10);
}
