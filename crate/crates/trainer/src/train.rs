use dataset_gen::BiasedDataset;
use identification::{flag_precision, identify, loss_bounds};
use pruning::{magnitude_prune, prune_by_svd, SaliencyVector};
use subspace_core::{svd, Matrix};

use crate::loss::{loss_gradient, mean, per_instance_losses, penalized_gradient};
use crate::{
    compute_eta, IterationRecord, ModelState, PruneEvent, Regime, Snapshot, TrainConfig, TrainError, TrainingTrace,
};

/// Features and targets only. Population membership cannot reach the loop
/// through this type.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub x: &'a Matrix,
    pub y: &'a Matrix,
}

impl<'a> TrainingData<'a> {
    pub fn new(x: &'a Matrix, y: &'a Matrix) -> Self {
        Self { x, y }
    }

    pub fn from_dataset(ds: &'a BiasedDataset) -> Self {
        Self { x: &ds.x, y: &ds.y }
    }
}

/// Runs `cfg.iterations` full-batch steps from the seeded initialization.
///
/// `monitor` must describe the same rows as `data`. It only feeds the
/// diagnostic columns (ID/OOD losses, flag precision) and prune-report
/// annotations.
pub fn train(
    data: TrainingData<'_>,
    cfg: &TrainConfig,
    monitor: Option<&BiasedDataset>,
) -> Result<TrainingTrace, TrainError> {
    let m = data.y.ncols();
    let d = data.x.ncols();
    let mut state = ModelState::initial(m, d, cfg.init_scale, cfg.seed);
    if cfg.use_saliency {
        state.saliency = Some(SaliencyVector::ones(m));
    }
    train_from(state, data, cfg, monitor)
}

/// Same as [`train`] from an explicit starting state.
pub fn train_from(
    mut state: ModelState,
    data: TrainingData<'_>,
    cfg: &TrainConfig,
    monitor: Option<&BiasedDataset>,
) -> Result<TrainingTrace, TrainError> {
    cfg.validate()?;
    let (x, y) = (data.x, data.y);
    let n = x.nrows();
    if let Some(ds) = monitor {
        if ds.n() != n || ds.d() != x.ncols() {
            return Err(TrainError::ShapeMismatch(format!("monitor has {}×{}, data {}×{}", ds.n(), ds.d(), n, x.ncols())));
        }
    }
    let p_i = cfg.p_i_prior;
    let p_o = 1.0 - p_i;
    let sigma = identification::estimate_sigma_fg_online(cfg.sigma_prior)?;
    let mut prev: Option<f64> = None;
    let mut eta = match cfg.eta_mode {
        crate::EtaMode::Fixed { value } => value,
        crate::EtaMode::Auto2e { .. } => 0.0,
    };
    let mut trace = TrainingTrace {
        regime: cfg.regime,
        records: Vec::with_capacity(cfg.iterations),
        prune_events: Vec::new(),
        snapshots: Vec::new(),
        masks: Vec::new(),
        final_state: state.clone(),
    };

    for t in 0..cfg.iterations {
        state.iteration = t;
        let losses = per_instance_losses(&state, x, y, cfg.loss)?;
        let avg = mean(&losses);
        if !avg.is_finite() || avg > 1e6 {
            return Err(TrainError::Divergence { iteration: t, loss: avg });
        }
        let bounds = loss_bounds(prev.unwrap_or(avg), avg, p_i, p_o, sigma, sigma)?.with_slack(cfg.delta_slack);
        let mask = identify(&losses, &bounds);
        let flagged: Vec<usize> = (0..n).filter(|i| mask[*i]).collect();

        if cfg.snapshot_every > 0 && t % cfg.snapshot_every == 0 {
            trace.snapshots.push(Snapshot {
                iteration: t,
                w: state.w.clone(),
                gates: state.saliency.as_ref().map(|s| s.gates().to_vec()),
                singular_values: svd(&state.w).singular_values,
            });
        }

        let every = cfg.prune.every;
        let on_schedule = every > 0 && t % every == 0;
        let prune_now = on_schedule && t > 0 && !flagged.is_empty();
        let xf = || x.select_rows(&flagged);
        let mut pruned_rank = None;

        let grad = match cfg.regime {
            Regime::Erm => loss_gradient(&state, x, y, cfg.loss)?,
            Regime::MagnitudeBaseline => {
                if prune_now {
                    let fx = xf();
                    let (_, _, mut report) =
                        prune_by_svd(&state.w, state.saliency.as_ref(), &fx, cfg.prune.energy_keep, cfg.prune.restriction)?;
                    let pruned = magnitude_prune(&state.w, report.kept_rank)?;
                    if let Some(ds) = monitor {
                        report.annotate((&state.w, state.saliency.as_ref()), (&pruned, state.saliency.as_ref()), ds)?;
                    }
                    pruned_rank = Some(report.kept_rank);
                    let gates = state.saliency.as_ref().map(|s| s.gates().to_vec());
                    trace.prune_events.push(PruneEvent {
                        iteration: t,
                        regime: cfg.regime,
                        eta,
                        flagged: flagged.len(),
                        report,
                        w_before: state.w.clone(),
                        w_after: pruned.clone(),
                        gates_before: gates.clone(),
                        gates_after: gates,
                    });
                    state.w = pruned;
                }
                loss_gradient(&state, x, y, cfg.loss)?
            }
            Regime::Sfp => {
                let eta_every = if every > 0 { every } else { 50 };
                if !flagged.is_empty() && t % eta_every == 0 {
                    eta = compute_eta(&state, &xf(), &y.select_rows(&flagged), cfg.eta_mode, cfg.loss)?;
                }
                if prune_now {
                    let fx = xf();
                    let (pruned, gates, mut report) =
                        prune_by_svd(&state.w, state.saliency.as_ref(), &fx, cfg.prune.energy_keep, cfg.prune.restriction)?;
                    if let Some(ds) = monitor {
                        report.annotate((&state.w, state.saliency.as_ref()), (&pruned, gates.as_ref()), ds)?;
                    }
                    pruned_rank = Some(report.kept_rank);
                    trace.prune_events.push(PruneEvent {
                        iteration: t,
                        regime: cfg.regime,
                        eta,
                        flagged: flagged.len(),
                        report,
                        w_before: state.w.clone(),
                        w_after: pruned.clone(),
                        gates_before: state.saliency.as_ref().map(|s| s.gates().to_vec()),
                        gates_after: gates.as_ref().map(|s| s.gates().to_vec()),
                    });
                    state.w = pruned;
                    state.saliency = gates;
                }
                penalized_gradient(&state, x, y, &mask, eta, cfg.penalty_norm, cfg.loss)?
            }
        };

        let (id_loss, ood_loss, precision) = match monitor {
            Some(ds) => {
                let pick = |want: bool| {
                    let v: Vec<f64> = (0..n).filter(|i| ds.id_mask[*i] == want).map(|i| losses[i]).collect();
                    (!v.is_empty()).then(|| mean(&v))
                };
                (pick(true), pick(false), flag_precision(&mask, &ds.id_mask))
            }
            None => (None, None, None),
        };
        trace.records.push(IterationRecord {
            iteration: t,
            avg_loss: avg,
            id_loss,
            ood_loss,
            sup_id: bounds.sup_id,
            inf_id_plain: bounds.inf_id_plain,
            inf_id_fair: bounds.inf_id_fair,
            delta: bounds.delta,
            flagged_fraction: flagged.len() as f64 / n.max(1) as f64,
            flag_precision: precision,
            eta,
            pruned_rank,
        });
        if cfg.keep_masks {
            trace.masks.push(mask);
        }

        state.w -= grad * cfg.learning_rate;
        if !state.w.iter().all(|v| v.is_finite()) {
            return Err(TrainError::Divergence { iteration: t, loss: f64::INFINITY });
        }
        prev = Some(avg);
    }
    state.iteration = cfg.iterations;
    trace.final_state = state;
    Ok(trace)
}
