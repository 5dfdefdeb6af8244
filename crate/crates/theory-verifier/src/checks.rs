use std::collections::BTreeMap;

use dataset_gen::BiasedDataset;
use identification::{estimate_sigma_fg_exact, SigmaReduction};
use pruning::{risk_gap, SaliencyVector};
use serde::{Deserialize, Serialize};
use subspace_core::Matrix;
use trainer::{train, EtaMode, ModelState, Regime, TrainConfig, TrainingData, TrainingTrace};

use crate::measures::{directional_rates, invariant_fidelity, population_spectrum, spurious_energy};
use crate::{dataset_fingerprint, relative_error, Claim, TheoryReport, Tolerances, Verdict, VerifyError};

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Directional-gradient gap between F′ and G′ against
/// `2(p_i²σ_F² − p_o²σ_G²)`, over the snapshots in `window`.
///
/// σ² is the population's mean second moment along its own split. In the
/// symmetric case (prediction below `symmetric_abs`) the check passes when
/// both sides vanish.
pub fn check_prop2(
    trace: &TrainingTrace,
    ds: &BiasedDataset,
    window: (usize, usize),
    tol: &Tolerances,
) -> Result<TheoryReport, VerifyError> {
    let sigma_f2 = population_spectrum(ds, true, &ds.split.spurious);
    let sigma_g2 = population_spectrum(ds, false, &ds.split.unknown);
    let predicted_value = 2.0 * (ds.p_i.powi(2) * sigma_f2 - ds.p_o.powi(2) * sigma_g2);
    let mut predicted = Vec::new();
    let mut measured = Vec::new();
    let mut errors = Vec::new();
    for snap in trace.snapshots.iter().filter(|s| s.iteration >= window.0 && s.iteration <= window.1) {
        let mut state = ModelState::new(snap.w.clone());
        state.saliency = snap.gates.clone().map(SaliencyVector::new).transpose()?;
        let Some(r) = directional_rates(&state, ds)? else { continue };
        let value = r.rate_f - r.rate_g;
        predicted.push(predicted_value);
        measured.push(value);
        errors.push(relative_error(value, predicted_value));
    }
    if measured.is_empty() {
        return Err(VerifyError::EmptyWindow { lo: window.0, hi: window.1 });
    }
    let symmetric = predicted_value.abs() < tol.symmetric_abs;
    let rel = median(&errors);
    let ok = if symmetric { measured.iter().all(|m| m.abs() < tol.symmetric_abs) } else { rel < tol.prop2 };
    let mut details = BTreeMap::new();
    details.insert("sigma_f2".into(), sigma_f2);
    details.insert("sigma_g2".into(), sigma_g2);
    details.insert("median_measured".into(), median(&measured));
    Ok(TheoryReport {
        claim: Claim::Prop2,
        predicted,
        measured,
        relative_error: rel,
        epsilon_term: None,
        tolerance: tol.prop2,
        verdict: verdict(ok),
        fingerprint: dataset_fingerprint(ds, "prop2"),
        details,
        note: if symmetric { "symmetric case: both sides compared to zero".into() } else { String::new() },
    })
}

/// Plateau loss gap `L_ood − L_id` against `(p_i² − p_o²)(1 − σ) + ε`.
///
/// ε is the iteration-0 gap and σ the exact ID/OOD overlap reduced by
/// `reduction`. The plateau test is a relative avg-loss change below 1% over
/// the last 10 iterations.
pub fn check_prop3(
    trace: &TrainingTrace,
    ds: &BiasedDataset,
    reduction: SigmaReduction,
    tol: &Tolerances,
) -> Result<TheoryReport, VerifyError> {
    let recs = &trace.records;
    let first = recs.first().ok_or(VerifyError::MissingMonitor)?;
    let last = recs.last().expect("non-empty");
    let (Some(id0), Some(ood0), Some(id), Some(ood)) = (first.id_loss, first.ood_loss, last.id_loss, last.ood_loss) else {
        return Err(VerifyError::MissingMonitor);
    };
    if recs.len() < 11 {
        return Err(VerifyError::NotConverged(f64::INFINITY));
    }
    let ref_loss = recs[recs.len() - 11].avg_loss;
    let change = (last.avg_loss - ref_loss).abs() / ref_loss.abs().max(f64::MIN_POSITIVE);
    if change > 0.01 {
        return Err(VerifyError::NotConverged(100.0 * change));
    }
    let epsilon = ood0 - id0;
    let sigma = estimate_sigma_fg_exact(ds, reduction)?;
    let structural = (ds.p_i.powi(2) - ds.p_o.powi(2)) * (1.0 - sigma);
    let predicted = structural + epsilon;
    let measured = ood - id;
    let rel = relative_error(measured, predicted);
    let symmetric = (ds.p_i - ds.p_o).abs() < 1e-12;
    let sign_ok = if ds.p_i > ds.p_o { measured > 0.0 } else { measured < 0.0 };
    let ok = if symmetric { (measured - epsilon).abs() < tol.symmetric_gap * first.avg_loss } else { sign_ok && rel < tol.prop3 };
    let mut details = BTreeMap::new();
    details.insert("structural".into(), structural);
    details.insert("sigma_fg".into(), sigma);
    details.insert("sign_ok".into(), f64::from(u8::from(symmetric || sign_ok)));
    details.insert("initial_avg_loss".into(), first.avg_loss);
    details.insert("plateau_change".into(), change);
    Ok(TheoryReport {
        claim: Claim::Prop3,
        predicted: vec![predicted],
        measured: vec![measured],
        relative_error: rel,
        epsilon_term: Some(epsilon),
        tolerance: tol.prop3,
        verdict: verdict(ok),
        fingerprint: dataset_fingerprint(ds, &format!("prop3 {reduction:?}")),
        details,
        note: if symmetric { "symmetric case: |measured − ε| against the initial avg loss".into() } else { String::new() },
    })
}

/// Risk-gap ratio of `full` over `pruned`; passes at `≥ 1 − slack`. A
/// vanishing pruned gap is reported as an infinite ratio and passes.
pub fn check_lemma1(
    full: (&Matrix, Option<&SaliencyVector>),
    pruned: (&Matrix, Option<&SaliencyVector>),
    ds: &BiasedDataset,
    tol: &Tolerances,
) -> Result<TheoryReport, VerifyError> {
    let g = risk_gap(full, pruned, ds)?;
    let mut details = BTreeMap::new();
    details.insert("gap_full".into(), g.gap_full);
    details.insert("gap_pruned".into(), g.gap_pruned);
    details.insert("raw_full".into(), g.raw_full);
    details.insert("raw_pruned".into(), g.raw_pruned);
    let bound = 1.0 - tol.lemma1;
    Ok(TheoryReport {
        claim: Claim::Lemma1,
        predicted: vec![1.0],
        measured: vec![g.ratio],
        relative_error: if g.degenerate { f64::INFINITY } else { relative_error(g.ratio, 1.0) },
        epsilon_term: None,
        tolerance: tol.lemma1,
        verdict: verdict(g.ratio >= bound),
        fingerprint: dataset_fingerprint(ds, "lemma1"),
        details,
        note: if g.degenerate { "pruned gap below 1e-12; ratio reported as +inf".into() } else { String::new() },
    })
}

/// η values for the penalty-bound sweep, as multiples of 2e.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSweep {
    pub factors: Vec<f64>,
}

impl Default for EtaSweep {
    fn default() -> Self {
        Self { factors: vec![0.5, 1.0, 10.0] }
    }
}

/// Runs ERM and one SFP run per η factor and checks that (i) compliant runs
/// (factor ≤ 1) keep invariant fidelity within `lemma2` of ERM, (ii) spurious
/// energy strictly falls with η from ERM through the compliant runs, and
/// (iii) every non-compliant run is less faithful than every compliant one.
///
/// ERM stands in for η = 0; an SFP run with zero penalty would still prune.
pub fn check_lemma2(
    ds: &BiasedDataset,
    sweep: &EtaSweep,
    base: &TrainConfig,
    tol: &Tolerances,
) -> Result<TheoryReport, VerifyError> {
    let mut factors: Vec<f64> = sweep.factors.iter().copied().filter(|f| *f > 0.0).collect();
    factors.sort_by(f64::total_cmp);
    if factors.is_empty() {
        return Err(VerifyError::BadSweep("no positive η factor".into()));
    }
    if !factors.iter().any(|f| *f <= 1.0) {
        return Err(VerifyError::BadSweep("needs a factor ≤ 1 (η ≤ 2e)".into()));
    }
    if !factors.iter().any(|f| *f >= 5.0) {
        return Err(VerifyError::BadSweep("needs a factor ≫ 1 (η ≫ 2e)".into()));
    }
    let data = TrainingData::from_dataset(ds);
    let erm_cfg = TrainConfig { regime: Regime::Erm, ..base.clone() };
    let erm = train(data, &erm_cfg, Some(ds))?;
    let measure = |t: &TrainingTrace| -> Result<(f64, f64), VerifyError> {
        let s = &t.final_state;
        Ok((invariant_fidelity(&s.w, s.saliency.as_ref(), ds)?, spurious_energy(&s.w, s.saliency.as_ref(), ds)?))
    };
    let (fid_erm, sp_erm) = measure(&erm)?;
    let mut runs = Vec::new();
    for &f in &factors {
        let cfg = TrainConfig { regime: Regime::Sfp, eta_mode: EtaMode::Auto2e { factor: f }, ..base.clone() };
        let t = train(data, &cfg, Some(ds))?;
        let (fid, sp) = measure(&t)?;
        runs.push((f, fid, sp));
    }
    let compliant: Vec<_> = runs.iter().filter(|r| r.0 <= 1.0).collect();
    let violating: Vec<_> = runs.iter().filter(|r| r.0 > 1.0).collect();
    let keeps = compliant.iter().all(|r| r.1 >= (1.0 - tol.lemma2) * fid_erm);
    let mut energies = vec![sp_erm];
    energies.extend(compliant.iter().map(|r| r.2));
    let decreasing = energies.windows(2).all(|w| w[1] < w[0]);
    let worst_ok = compliant.iter().map(|r| r.1).fold(fid_erm, f64::min);
    let degrades = violating.iter().all(|r| r.1 < worst_ok);

    let mut details = BTreeMap::new();
    details.insert("fidelity_erm".into(), fid_erm);
    details.insert("spurious_erm".into(), sp_erm);
    for (f, fid, sp) in &runs {
        details.insert(format!("fidelity_x{f}"), *fid);
        details.insert(format!("spurious_x{f}"), *sp);
    }
    details.insert("keeps_fidelity".into(), f64::from(u8::from(keeps)));
    details.insert("spurious_decreasing".into(), f64::from(u8::from(decreasing)));
    details.insert("violation_degrades".into(), f64::from(u8::from(degrades)));
    let worst_drop = compliant.iter().map(|r| relative_error(r.1, fid_erm)).fold(0.0, f64::max);
    Ok(TheoryReport {
        claim: Claim::Lemma2,
        predicted: vec![fid_erm; runs.len()],
        measured: runs.iter().map(|r| r.1).collect(),
        relative_error: worst_drop,
        epsilon_term: None,
        tolerance: tol.lemma2,
        verdict: verdict(keeps && decreasing && degrades),
        fingerprint: dataset_fingerprint(ds, &format!("lemma2 {factors:?}")),
        details,
        note: format!("factors {factors:?} of 2e; measured = final invariant fidelity per run"),
    })
}
