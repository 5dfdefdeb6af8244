use dataset_gen::{make_environment, make_suite, BiasedDataset, EnvironmentConfig, SuiteConfig};
use proptest::prelude::*;
use pruning::SaliencyVector;
use subspace_core::Matrix;
use trainer::{
    compute_eta, gradient, gradient_decomposed, penalized_gradient, per_instance_losses, task_loss, train, EtaMode,
    LossKind, ModelState, PenaltyNorm, PruneSchedule, Regime, TrainConfig, TrainError, TrainingData,
};

fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Matrix::from_fn(rows, cols, |_, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

fn env(p_i: f64, n: usize, seed: u64) -> BiasedDataset {
    make_environment(&EnvironmentConfig { p_i, n, seed, ..Default::default() }).unwrap()
}

#[test]
fn loss_examples() {
    let ds = env(0.8, 200, 1);
    let opt = ModelState::new(ds.truth.w_star.clone());
    assert!(task_loss(&opt, &ds.x, &ds.y).unwrap() < 1e-24);

    let x = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let y = Matrix::from_row_slice(1, 1, &[1.0]);
    let zero = ModelState::new(Matrix::zeros(1, 2));
    assert_eq!(task_loss(&zero, &x, &y).unwrap(), 1.0);

    // Element-wise brute-force summation oracle.
    let w = lcg_matrix(3, 4, 2);
    let x = lcg_matrix(6, 4, 3);
    let y = lcg_matrix(6, 3, 4);
    let mut total = 0.0;
    for i in 0..6 {
        for j in 0..3 {
            let mut f = 0.0;
            for k in 0..4 {
                f += x[(i, k)] * w[(j, k)];
            }
            total += (f - y[(i, j)]).powi(2);
        }
    }
    let got = task_loss(&ModelState::new(w), &x, &y).unwrap();
    assert!((got - total / 6.0).abs() < 1e-10);
    assert!(matches!(task_loss(&zero, &lcg_matrix(2, 3, 1), &y), Err(TrainError::ShapeMismatch(_))));
}

fn finite_difference(state: &ModelState, x: &Matrix, y: &Matrix, kind: LossKind) -> Matrix {
    let h = 1e-5;
    let loss = |w: &Matrix| {
        let mut s = state.clone();
        s.w = w.clone();
        let l = per_instance_losses(&s, x, y, kind).unwrap();
        l.iter().sum::<f64>() / l.len() as f64
    };
    Matrix::from_fn(state.m(), state.d(), |i, j| {
        let mut up = state.w.clone();
        let mut down = state.w.clone();
        up[(i, j)] += h;
        down[(i, j)] -= h;
        (loss(&up) - loss(&down)) / (2.0 * h)
    })
}

#[test]
fn gradient_matches_central_differences() {
    for case in 0..20u64 {
        let (m, d, n) = (3, 4, 5 + case as usize % 4);
        let mut state = ModelState::new(lcg_matrix(m, d, case));
        if case % 2 == 1 {
            let gates = (0..m).map(|j| 0.25 + 0.25 * j as f64).collect();
            state.saliency = Some(SaliencyVector::new(gates).unwrap());
        }
        let x = lcg_matrix(n, d, 100 + case);
        let y = lcg_matrix(n, m, 200 + case);
        let analytic = gradient(&state, &x, &y).unwrap();
        let numeric = finite_difference(&state, &x, &y, LossKind::Squared);
        let rel = (&analytic - &numeric).norm() / numeric.norm().max(1e-12);
        assert!(rel < 1e-6, "case {case}: relative error {rel:e}");

        // Cross-entropy on one-hot targets.
        let labels: Vec<usize> = (0..n).map(|i| (i + case as usize) % m).collect();
        let mut onehot = Matrix::zeros(n, m);
        for (i, l) in labels.iter().enumerate() {
            onehot[(i, *l)] = 1.0;
        }
        let ce = penalized_gradient(&state, &x, &onehot, &vec![false; n], 0.0, PenaltyNorm::Flagged, LossKind::CrossEntropy)
            .unwrap();
        let numeric = finite_difference(&state, &x, &onehot, LossKind::CrossEntropy);
        let rel = (&ce - &numeric).norm() / numeric.norm().max(1e-12);
        assert!(rel < 1e-6, "case {case}: cross-entropy relative error {rel:e}");
    }
}

#[test]
fn decomposition_reproduces_direct_gradient() {
    for seed in 0..20u64 {
        let p_i = [0.5, 0.7, 0.8, 0.9][seed as usize % 4];
        let ds = make_environment(&EnvironmentConfig {
            d: 20,
            m: 4,
            n: 80,
            p_i,
            split_dims: [4, 4, 4],
            seed,
            ..Default::default()
        })
        .unwrap();
        let state = ModelState::new(lcg_matrix(4, 20, seed));
        let g = gradient(&state, &ds.x, &ds.y).unwrap();
        let parts = gradient_decomposed(&state, &ds).unwrap();
        let sum = &parts.id_term + &parts.ood_term + &parts.cross_residual;
        assert!((&sum - &g).amax() < 1e-8);
        assert!(parts.cross_residual.norm() / g.norm() < 1e-8, "seed {seed}");
    }
}

#[test]
fn single_population_has_no_ood_term() {
    let ds = env(1.0, 100, 3);
    let state = ModelState::new(lcg_matrix(ds.m(), ds.d(), 5));
    let parts = gradient_decomposed(&state, &ds).unwrap();
    assert_eq!(parts.ood_term.amax(), 0.0);
}

#[test]
fn correlated_rows_leave_a_cross_residual() {
    let mut ds = env(0.8, 100, 4);
    // Leak G′ energy into the ID rows so the split no longer holds.
    let leak = ds.split.unknown.columns().column(0).transpose() * 0.5;
    for i in ds.indices(true) {
        let row = ds.x.row(i) + &leak;
        ds.x.set_row(i, &row);
    }
    ds.y = ds.truth_response(&ds.x);
    let state = ModelState::new(lcg_matrix(ds.m(), ds.d(), 6));
    let g = gradient(&state, &ds.x, &ds.y).unwrap();
    let parts = gradient_decomposed(&state, &ds).unwrap();
    let sum = &parts.id_term + &parts.ood_term + &parts.cross_residual;
    assert!((&sum - &g).amax() < 1e-8);
    assert!(parts.cross_residual.norm() / g.norm() > 1e-3);
}

#[test]
fn eta_rules() {
    let x = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let y = Matrix::from_row_slice(1, 2, &[3.0, 4.0]);
    let zero = ModelState::new(Matrix::zeros(2, 2));
    let auto = EtaMode::Auto2e { factor: 1.0 };
    assert_eq!(compute_eta(&zero, &x, &y, auto, LossKind::Squared).unwrap(), 7.0);
    let fixed = EtaMode::Fixed { value: 0.1 };
    assert_eq!(compute_eta(&zero, &x, &y, fixed, LossKind::Squared).unwrap(), 0.1);
    let ds = env(0.8, 50, 2);
    let opt = ModelState::new(ds.truth.w_star.clone());
    assert!(compute_eta(&opt, &ds.x, &ds.y, auto, LossKind::Squared).unwrap() < 1e-12);
    assert!(matches!(
        compute_eta(&zero, &Matrix::zeros(0, 2), &Matrix::zeros(0, 2), auto, LossKind::Squared),
        Err(TrainError::EmptyFlagSet)
    ));
}

#[test]
fn erm_converges_on_unbiased_data() {
    let ds = env(0.5, 400, 5);
    let cfg = TrainConfig { learning_rate: 0.05, iterations: 500, p_i_prior: 0.5, ..Default::default() };
    let trace = train(TrainingData::from_dataset(&ds), &cfg, Some(&ds)).unwrap();
    let first = trace.records[0].avg_loss;
    let last = task_loss(&trace.final_state, &ds.x, &ds.y).unwrap();
    assert!(last < 1e-3 * first, "{last} vs {first}");
    // Closed-form least-squares solution on the data span is W* itself.
    let span = subspace_core::principal_row_basis(&ds.x, 1e-10).unwrap().projector();
    let err = (&trace.final_state.w * &span - &ds.truth.w_star).norm() / ds.truth.w_star.norm();
    assert!(err < 0.05);
    assert!(trace.records.windows(2).all(|w| w[1].avg_loss <= w[0].avg_loss));
}

#[test]
fn erm_loss_ordering_on_biased_data() {
    let ds = env(0.8, 1000, 6);
    let cfg = TrainConfig { iterations: 300, ..Default::default() };
    let trace = train(TrainingData::from_dataset(&ds), &cfg, Some(&ds)).unwrap();
    for r in &trace.records[10..] {
        assert!(r.id_loss.unwrap() < r.ood_loss.unwrap(), "iteration {}", r.iteration);
    }
    // Flagged instances are mostly ID instances.
    assert!(trace.records[100].flag_precision.unwrap() > 0.8);
}

#[test]
fn sfp_narrows_the_gap() {
    let ds = env(0.8, 1000, 7);
    let erm = train(TrainingData::from_dataset(&ds), &TrainConfig::default(), Some(&ds)).unwrap();
    let cfg = TrainConfig { regime: Regime::Sfp, ..Default::default() };
    let sfp = train(TrainingData::from_dataset(&ds), &cfg, Some(&ds)).unwrap();
    let gap = |r: &trainer::IterationRecord| (r.id_loss.unwrap() - r.ood_loss.unwrap()).abs();
    assert!(gap(sfp.last().unwrap()) < gap(erm.last().unwrap()));
    assert!(!sfp.prune_events.is_empty());
}

#[test]
#[ignore = "known red: the iteration-200 prune removes a small fraction of spurious response energy"]
fn prune_at_200_halves_spurious_energy() {
    let ds = env(0.8, 2000, 0);
    let cfg = TrainConfig { regime: Regime::Sfp, ..Default::default() };
    let sfp = train(TrainingData::from_dataset(&ds), &cfg, Some(&ds)).unwrap();
    let ev = sfp.prune_events.iter().find(|e| e.iteration == 200).expect("prune at 200");
    let r = &ev.report;
    let spurious = 1.0 - r.post_spurious_energy.unwrap() / r.pre_spurious_energy.unwrap();
    let invariant = 1.0 - r.post_invariant_energy.unwrap() / r.pre_invariant_energy.unwrap();
    assert!(spurious >= 0.5, "spurious energy reduced by {spurious:.3}");
    assert!(invariant <= 0.1, "invariant energy reduced by {invariant:.3}");
}

#[test]
fn zero_penalty_without_pruning_is_erm() {
    let ds = env(0.8, 300, 8);
    let erm = train(TrainingData::from_dataset(&ds), &TrainConfig { iterations: 120, ..Default::default() }, None).unwrap();
    let cfg = TrainConfig {
        iterations: 120,
        regime: Regime::Sfp,
        eta_mode: EtaMode::Fixed { value: 0.0 },
        prune: PruneSchedule { every: 0, ..Default::default() },
        ..Default::default()
    };
    let sfp = train(TrainingData::from_dataset(&ds), &cfg, None).unwrap();
    assert_eq!(erm.final_state.w, sfp.final_state.w);
}

#[test]
fn penalty_only_touches_flagged_rows() {
    let ds = env(0.8, 60, 9);
    let state = ModelState::new(lcg_matrix(ds.m(), ds.d(), 7));
    let none = vec![false; ds.n()];
    let g0 = gradient(&state, &ds.x, &ds.y).unwrap();
    let g1 = penalized_gradient(&state, &ds.x, &ds.y, &none, 3.0, PenaltyNorm::Flagged, LossKind::Squared).unwrap();
    assert_eq!(g0, g1);
    let some: Vec<bool> = (0..ds.n()).map(|i| i % 3 == 0).collect();
    let g2 = penalized_gradient(&state, &ds.x, &ds.y, &some, 3.0, PenaltyNorm::Batch, LossKind::Squared).unwrap();
    assert!((&g2 - &g0).amax() > 0.0);
}

#[test]
fn divergence_is_reported() {
    let ds = env(0.8, 100, 10);
    let cfg = TrainConfig { learning_rate: 5.0, iterations: 200, ..Default::default() };
    let err = train(TrainingData::from_dataset(&ds), &cfg, None).unwrap_err();
    assert!(matches!(err, TrainError::Divergence { .. }));
}

#[test]
fn trace_schema() {
    let ds = env(0.8, 200, 11);
    let cfg = TrainConfig { iterations: 60, regime: Regime::Sfp, ..Default::default() };
    let trace = train(TrainingData::from_dataset(&ds), &cfg, Some(&ds)).unwrap();
    assert_eq!(trace.records.len(), 60);
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, trainer::IterationRecord::COLUMNS.join(","));
    assert_eq!(text.lines().count(), 61);
    assert_eq!(trace.records[50].pruned_rank, trace.prune_events.first().map(|e| e.report.kept_rank));
}

#[test]
fn unbiased_suite_shows_no_background_gap() {
    let common = SuiteConfig { seed: 3, ..Default::default() };
    let suite = make_suite(&[0.0], 2000, &common).unwrap();
    let ds = &suite.test_env;
    let cfg = TrainConfig { iterations: 300, p_i_prior: 0.5, ..Default::default() };
    let trace = train(TrainingData::from_dataset(ds), &cfg, None).unwrap();
    let losses = per_instance_losses(&trace.final_state, &ds.x, &ds.y, LossKind::Squared).unwrap();
    // Recover each row's background cluster from its F′ coordinates.
    let coords = ds.split.spurious.coordinates(&ds.x);
    let anchor = coords.row(0).into_owned();
    let labels = ds.labels.as_ref().unwrap();
    let aligned: Vec<bool> = (0..ds.n()).map(|i| ((coords.row(i) - &anchor).norm() < 0.5) == (labels[i] == labels[0])).collect();
    let group = |want: bool| -> (f64, f64, f64) {
        let v: Vec<f64> = (0..ds.n()).filter(|i| aligned[*i] == want).map(|i| losses[i]).collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var, n)
    };
    let (ma, va, na) = group(true);
    let (mb, vb, nb) = group(false);
    let z = (ma - mb) / (va / na + vb / nb).sqrt();
    assert!(z.abs() < 4.0, "z = {z}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn erm_descent_is_monotone_below_the_step_bound(seed in 0u64..1000, p_i in 0.5f64..1.0) {
        let ds = make_environment(&EnvironmentConfig { d: 12, m: 3, n: 60, p_i, split_dims: [4, 4, 4], seed, ..Default::default() }).unwrap();
        let gram = ds.x.transpose() * &ds.x / ds.n() as f64;
        let top = gram.symmetric_eigenvalues().max();
        let cfg = TrainConfig { learning_rate: 0.9 / (2.0 * top), iterations: 80, p_i_prior: p_i, ..Default::default() };
        let trace = train(TrainingData::from_dataset(&ds), &cfg, None).unwrap();
        for w in trace.records.windows(2) {
            // The absolute slack covers round-off once the loss reaches the floor.
            prop_assert!(w[1].avg_loss <= w[0].avg_loss * (1.0 + 1e-12) + 1e-24);
        }
    }
}
