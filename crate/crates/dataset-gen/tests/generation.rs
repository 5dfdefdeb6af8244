use dataset_gen::{
    classification_view, make_environment, make_suite, pool, read_dataset, write_dataset,
    DatasetKind, EnvironmentConfig, GenError, SuiteConfig,
};
use proptest::prelude::*;
use subspace_core::{orthonormal_basis, overlap_spectrum, Matrix};

fn env(p_i: f64, n: usize, seed: u64) -> EnvironmentConfig {
    EnvironmentConfig { p_i, n, seed, ..Default::default() }
}

/// Closed-form least squares `argmin ‖x·Wᵀ − y‖` through the pseudo-inverse.
fn least_squares(x: &Matrix, y: &Matrix) -> Matrix {
    let pinv = x.clone().pseudo_inverse(1e-12).unwrap();
    (pinv * y).transpose()
}

fn accuracy(scores: &Matrix, labels: &[usize], rows: &[usize]) -> f64 {
    let hits = rows
        .iter()
        .filter(|&&i| {
            let row = scores.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == labels[i]
        })
        .count();
    hits as f64 / rows.len() as f64
}

#[test]
fn all_id_environment_has_no_unknown_energy() {
    let ds = make_environment(&env(1.0, 200, 1)).unwrap();
    assert!(ds.id_mask.iter().all(|b| *b));
    assert!(ds.split.unknown.coordinates(&ds.x).amax() < 1e-10);
    ds.validate().unwrap();
}

#[test]
fn even_split_is_exact() {
    let ds = make_environment(&env(0.5, 100, 2)).unwrap();
    assert_eq!(ds.id_count(), 50);
    assert_eq!(ds.n() - ds.id_count(), 50);
}

#[test]
fn generated_row_spaces_share_only_invariant_directions() {
    let cfg = EnvironmentConfig { d: 20, split_dims: [4, 4, 4], m: 4, ..env(0.8, 2000, 3) };
    let ds = make_environment(&cfg).unwrap();
    let f = orthonormal_basis(&ds.id_x()).unwrap();
    let g = orthonormal_basis(&ds.ood_x()).unwrap();
    assert_eq!((f.dim(), g.dim()), (8, 8));
    let spectrum = overlap_spectrum(&f, &g).unwrap();
    assert!(spectrum[..4].iter().all(|v| (v - 1.0).abs() < 1e-8), "{spectrum:?}");
    assert!(spectrum[4..].iter().all(|v| v.abs() < 1e-8), "{spectrum:?}");
    let fs = orthonormal_basis(&ds.split.spurious.project_rows(&ds.id_x())).unwrap();
    let gu = orthonormal_basis(&ds.split.unknown.project_rows(&ds.ood_x())).unwrap();
    assert!(overlap_spectrum(&fs, &gu).unwrap().iter().all(|v| v.abs() < 1e-8));
}

#[test]
fn default_targets_have_unit_mean_square() {
    let ds = make_environment(&env(0.8, 2000, 4)).unwrap();
    let ms = ds.y.norm_squared() / ds.n() as f64;
    assert!((ms - 1.0).abs() < 1e-9, "{ms}");
}

#[test]
fn rejects_bad_inputs() {
    let too_many = EnvironmentConfig { d: 10, split_dims: [4, 4, 4], ..Default::default() };
    assert!(matches!(make_environment(&too_many), Err(GenError::BadSplit { .. })));
    assert!(matches!(make_environment(&env(1.2, 100, 0)), Err(GenError::BadProportion(_))));
    assert!(matches!(make_environment(&env(0.5, 3, 0)), Err(GenError::TooFewInstances(3))));
    assert!(matches!(make_suite(&[], 100, &SuiteConfig::default()), Err(GenError::EmptySuite)));
    let ds = make_environment(&env(0.5, 100, 0)).unwrap();
    assert!(matches!(classification_view(&ds, 1), Err(GenError::BadClasses(1))));
}

#[test]
fn colored_protocol_has_unbiased_test_environment() {
    let suite = make_suite(&[0.8, 0.6, 0.0], 500, &SuiteConfig::default()).unwrap();
    assert_eq!(suite.train_envs.len() + 1, 3);
    assert_eq!(suite.test_env.id_count(), 0);
    assert_eq!(suite.train_envs[0].id_count(), 400);
    assert_eq!(suite.train_envs[1].id_count(), 300);
    for e in suite.train_envs.iter().chain([&suite.test_env]) {
        e.validate().unwrap();
    }
    let harder = make_suite(&[0.9, 0.7, 0.0], 500, &SuiteConfig::default()).unwrap();
    assert_eq!(harder.train_envs[0].id_count(), 450);
    assert!(matches!(harder.test_env.kind, DatasetKind::Suite { bias_ratio, .. } if bias_ratio == 0.0));
}

#[test]
fn single_ratio_suite_reuses_its_environment() {
    let suite = make_suite(&[0.0], 200, &SuiteConfig::default()).unwrap();
    assert_eq!(suite.train_envs.len(), 1);
    assert_eq!(suite.train_envs[0], suite.test_env);
}

#[test]
fn two_class_view_follows_the_projection() {
    let ds = make_environment(&EnvironmentConfig { m: 2, ..env(0.5, 100, 5) }).unwrap();
    let view = classification_view(&ds, 2).unwrap();
    // An input lying along the second projection scores highest there.
    let row1 = view.truth.w_star.row(1).into_owned();
    let row0 = view.truth.w_star.row(0).into_owned();
    let x = (&row1 - &row0 * (row0.dot(&row1) / row0.norm_squared())).transpose();
    let scores = x.transpose() * view.truth.w_star.transpose();
    assert!(scores[(0, 1)] > scores[(0, 0)]);
    let labels = view.labels.as_ref().unwrap();
    for i in 0..view.n() {
        let hot: Vec<f64> = view.y.row(i).iter().copied().collect();
        let mut want = vec![0.0; 2];
        want[labels[i]] = 1.0;
        assert_eq!(hot, want);
    }
}

#[test]
fn unbiased_view_is_nearly_linearly_separable() {
    let ds = make_environment(&env(0.5, 2000, 6)).unwrap();
    let view = classification_view(&ds, 2).unwrap();
    let w = least_squares(&view.x, &view.y);
    let all: Vec<usize> = (0..view.n()).collect();
    let acc = accuracy(&(&view.x * w.transpose()), view.labels.as_ref().unwrap(), &all);
    assert!(acc > 0.95, "{acc}");
}

#[test]
fn locked_backgrounds_form_a_shortcut() {
    let suite = make_suite(&[0.9, 0.0], 2000, &SuiteConfig::default()).unwrap();
    let ds = &suite.train_envs[0];
    let xs = ds.split.spurious.project_rows(&ds.x);
    let w = least_squares(&xs, &ds.y);
    let acc = accuracy(&(&xs * w.transpose()), ds.labels.as_ref().unwrap(), &ds.indices(true));
    assert!(acc > 0.8, "{acc}");
}

#[test]
fn pooling_recomputes_the_id_fraction() {
    let suite = make_suite(&[0.8, 0.6, 0.0], 1000, &SuiteConfig::default()).unwrap();
    let pooled = pool(&suite.train_envs).unwrap();
    assert_eq!(pooled.n(), 2000);
    assert!((pooled.p_i - 0.7).abs() < 1e-12);
    pooled.validate().unwrap();
}

#[test]
fn files_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let reg = make_environment(&env(0.8, 300, 7)).unwrap();
    let suite = make_suite(&[0.8, 0.0], 300, &SuiteConfig::default()).unwrap();
    for (k, ds) in [reg, suite.test_env].into_iter().enumerate() {
        let (c, j) = (dir.path().join(format!("{k}.csv")), dir.path().join(format!("{k}.json")));
        write_dataset(&ds, &c, &j).unwrap();
        assert_eq!(read_dataset(&c, &j).unwrap(), ds);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generator_invariants_hold(p_i in 0.0f64..=1.0, n in 4usize..300, seed in any::<u64>(),
                                 ki in 1usize..5, ks in 0usize..5, ku in 0usize..5, noise in 0.0f64..0.3) {
        let cfg = EnvironmentConfig { d: 16, m: 5, n, p_i, split_dims: [ki, ks, ku], noise_scale: noise, seed, ..Default::default() };
        let ds = make_environment(&cfg).unwrap();
        prop_assert!(ds.validate().is_ok(), "{:?}", ds.validate());
        prop_assert!((ds.id_count() as f64 / n as f64 - p_i).abs() <= 1.0 / n as f64);
        prop_assert_eq!(make_environment(&cfg).unwrap(), ds);
    }

    #[test]
    fn labels_ignore_spurious_coordinates(seed in any::<u64>(), i in 0usize..200, j in 0usize..200) {
        let suite = make_suite(&[0.8, 0.0], 200, &SuiteConfig { seed, ..Default::default() }).unwrap();
        let ds = &suite.train_envs[0];
        let sp = ds.split.spurious.projector();
        // Swap the spurious part of instance i for that of instance j.
        let xi = ds.x.row(i).into_owned();
        let xj = ds.x.row(j).into_owned();
        let swapped = &xi - &xi * &sp + &xj * &sp;
        let scores = swapped * ds.truth.w_star.transpose();
        let best = if scores[(0, 1)] > scores[(0, 0)] { 1 } else { 0 };
        prop_assert_eq!(best, ds.labels.as_ref().unwrap()[i]);
    }
}
