use std::collections::BTreeMap;
use std::fmt::Write as _;

use dataset_gen::{make_environment, make_suite, pool, read_dataset, write_dataset, BiasedDataset, EnvironmentConfig, GenError, SuiteConfig};
use identification::pool_overlap_spectrum;
use pruning::SaliencyVector;
use rayon::prelude::*;
use serde::Serialize;
use theory_verifier::{
    check_lemma1, check_lemma2, check_prop2, check_prop3, fingerprint, summary_table, Claim, EtaSweep, TheoryReport,
};
use trainer::{accuracy, per_instance_losses, ModelState, Regime, TrainError, TrainingData, TrainingTrace};

use crate::artifacts::{
    create, harness_version, matrix_from, read_json, read_jsonl, read_trace_csv, rows_of, write_json, write_jsonl,
    write_text, ModelSidecar, PruneLine, RootManifest, RunManifest, SnapshotLine, FORMAT_VERSION,
};
use crate::config::{DatasetKindConfig, ExperimentConfig, Format};
use crate::{HarnessError, Layout};

/// Runs `f` on a pool of `jobs` threads; 0 lets rayon choose.
pub fn run_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// First error in job order, so failures are reported deterministically.
fn collect_ordered<T>(results: Vec<Result<T, HarnessError>>) -> Result<Vec<T>, HarnessError> {
    results.into_iter().collect()
}

/// The config as embedded in artifacts: the output location is where the
/// copy itself lives, so it is recorded as `.`.
fn portable_config(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output.directory = ".".into();
    c.to_toml_string()
}

fn write_root(cfg: &ExperimentConfig, layout: &Layout) -> Result<(), HarnessError> {
    let text = portable_config(cfg);
    write_text(&layout.config_copy(), &text)?;
    write_json(
        &layout.manifest(),
        &RootManifest {
            format_version: FORMAT_VERSION,
            harness_version: harness_version(),
            config_fingerprint: fingerprint(&[&text]),
            seeds: cfg.seeds().to_vec(),
            regimes: cfg.train.regimes.clone(),
        },
    )
}

fn env_count(cfg: &ExperimentConfig) -> usize {
    match cfg.dataset.kind {
        DatasetKindConfig::Regression => 1,
        DatasetKindConfig::Suite => cfg.dataset.bias_ratios.len(),
    }
}

fn build_datasets(cfg: &ExperimentConfig, data_seed: u64) -> Result<Vec<BiasedDataset>, GenError> {
    let ds = &cfg.dataset;
    match ds.kind {
        DatasetKindConfig::Regression => Ok(vec![make_environment(&EnvironmentConfig {
            d: ds.d,
            m: ds.m,
            n: ds.n,
            p_i: ds.p_i,
            split_dims: ds.split_dims,
            noise_scale: ds.noise_scale,
            whiten: ds.whiten,
            truth: None,
            seed: data_seed,
        })?]),
        DatasetKindConfig::Suite => {
            let common = SuiteConfig {
                d: ds.d,
                classes: ds.classes,
                split_dims: ds.split_dims,
                background_scale: ds.background_scale,
                background_noise: ds.background_noise,
                seed: data_seed,
            };
            let suite = make_suite(&ds.bias_ratios, ds.n, &common)?;
            if ds.bias_ratios.len() == 1 {
                Ok(vec![suite.test_env])
            } else {
                let mut envs = suite.train_envs;
                envs.push(suite.test_env);
                Ok(envs)
            }
        }
    }
}

fn load_envs(cfg: &ExperimentConfig, layout: &Layout, seed: u64) -> Result<Vec<BiasedDataset>, HarnessError> {
    (0..env_count(cfg))
        .map(|j| {
            let (csv, json) = layout.env_files(seed, j);
            if !csv.exists() || !json.exists() {
                return Err(HarnessError::MissingTrace(format!("{} (run `generate` first)", csv.display())));
            }
            Ok(read_dataset(&csv, &json)?)
        })
        .collect()
}

/// Pooled training environments and the held-out test environment. A
/// single environment serves as both.
fn train_test(envs: Vec<BiasedDataset>) -> Result<(BiasedDataset, BiasedDataset), HarnessError> {
    match envs.len() {
        0 => Err(HarnessError::Malformed("no environments".into())),
        1 => {
            let only = envs.into_iter().next().expect("one env");
            Ok((only.clone(), only))
        }
        k => Ok((pool(&envs[..k - 1])?, envs[k - 1].clone())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub lines: Vec<String>,
}

impl GenerateSummary {
    pub fn text(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\n")).collect()
    }
}

fn spectrum_text(ds: &BiasedDataset) -> String {
    match pool_overlap_spectrum(ds) {
        Ok(s) => {
            let vals: Vec<String> = s.iter().map(|v| format!("{v:.4}")).collect();
            format!("[{}]", vals.join(", "))
        }
        Err(_) => "n/a (single population)".into(),
    }
}

/// Writes one dataset CSV + metadata sidecar per (seed, environment).
pub fn generate(cfg: &ExperimentConfig) -> Result<GenerateSummary, HarnessError> {
    let layout = Layout::new(&cfg.output.directory);
    write_root(cfg, &layout)?;
    let per_seed: Vec<Result<Vec<String>, HarnessError>> = cfg
        .seeds()
        .par_iter()
        .map(|&s| {
            let data_seed = cfg.data_seed(s);
            let envs = build_datasets(cfg, data_seed)?;
            let dir = layout.data_dir(s);
            std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            let mut lines = Vec::new();
            for (j, ds) in envs.iter().enumerate() {
                let (csv, json) = layout.env_files(s, j);
                write_dataset(ds, &csv, &json)?;
                lines.push(format!(
                    "seed {s} env {j}: n={} d={} m={} p_i={:.4} overlap={}",
                    ds.n(),
                    ds.d(),
                    ds.m(),
                    ds.p_i,
                    spectrum_text(ds)
                ));
            }
            Ok(lines)
        })
        .collect();
    let lines: Vec<String> = collect_ordered(per_seed)?.into_iter().flatten().collect();
    let summary = GenerateSummary { lines };
    if cfg.output.wants(Format::Txt) {
        write_text(&layout.root().join("data").join("summary.txt"), &summary.text())?;
    }
    Ok(summary)
}

fn train_error(run: &str, e: TrainError) -> HarnessError {
    match e {
        TrainError::Divergence { iteration, loss } => HarnessError::Divergence { run: run.to_string(), iteration, loss },
        other => HarnessError::Train { run: run.to_string(), source: other },
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn run_one(cfg: &ExperimentConfig, layout: &Layout, regime: Regime, seed: u64) -> Result<String, HarnessError> {
    let run = Layout::run_name(regime, seed);
    let (tr, te) = train_test(load_envs(cfg, layout, seed)?)?;
    let tcfg = cfg.train_config(regime, seed);
    let trace = trainer::train(TrainingData::from_dataset(&tr), &tcfg, Some(&tr)).map_err(|e| train_error(&run, e))?;
    let dir = layout.run_dir(regime, seed);
    trace.write_csv(create(&dir.join("trace.csv"))?).map_err(|e| train_error(&run, e))?;
    let prunes: Vec<PruneLine> = trace.prune_events.iter().map(PruneLine::from).collect();
    write_jsonl(&dir.join("prune.jsonl"), &prunes)?;
    let snaps: Vec<SnapshotLine> = trace.snapshots.iter().map(SnapshotLine::from).collect();
    write_jsonl(&dir.join("snapshots.jsonl"), &snaps)?;

    let state = &trace.final_state;
    let last = trace.last().ok_or_else(|| HarnessError::Malformed(format!("{run}: empty trace")))?;
    let test_losses = per_instance_losses(state, &te.x, &te.y, tcfg.loss).map_err(|e| train_error(&run, e))?;
    let acc = |ds: &BiasedDataset| -> Result<Option<f64>, HarnessError> {
        ds.labels.as_ref().map(|l| accuracy(state, &ds.x, l).map_err(|e| train_error(&run, e))).transpose()
    };
    let model = ModelSidecar {
        run: run.clone(),
        regime,
        seed,
        data_seed: cfg.data_seed(seed),
        iterations: tcfg.iterations,
        w: rows_of(&state.w),
        gates: state.saliency.as_ref().map(|s| s.gates().to_vec()),
        final_avg_loss: last.avg_loss,
        final_id_loss: last.id_loss,
        final_ood_loss: last.ood_loss,
        test_loss: mean(&test_losses),
        train_accuracy: acc(&tr)?,
        test_accuracy: acc(&te)?,
    };
    write_json(&dir.join("model.json"), &model)?;
    write_json(
        &dir.join("run.json"),
        &RunManifest {
            run: run.clone(),
            format_version: FORMAT_VERSION,
            harness_version: harness_version(),
            regime,
            seed,
            data_seed: cfg.data_seed(seed),
            train_config: tcfg,
            experiment: portable_config(cfg),
        },
    )?;
    Ok(run)
}

/// Trains every (regime, seed) pair; returns the run names in job order.
pub fn train_all(cfg: &ExperimentConfig) -> Result<Vec<String>, HarnessError> {
    let layout = Layout::new(&cfg.output.directory);
    write_root(cfg, &layout)?;
    let jobs: Vec<(Regime, u64)> =
        cfg.train.regimes.iter().flat_map(|r| cfg.seeds().iter().map(move |s| (*r, *s))).collect();
    let results: Vec<_> = jobs.par_iter().map(|(r, s)| run_one(cfg, &layout, *r, *s)).collect();
    collect_ordered(results)
}

fn load_trace(layout: &Layout, regime: Regime, seed: u64) -> Result<TrainingTrace, HarnessError> {
    let dir = layout.run_dir(regime, seed);
    let records = read_trace_csv(&dir.join("trace.csv"))?;
    let snapshots = read_jsonl::<SnapshotLine>(&dir.join("snapshots.jsonl"))?
        .iter()
        .map(SnapshotLine::to_snapshot)
        .collect::<Result<Vec<_>, _>>()?;
    let model: ModelSidecar = read_json(&dir.join("model.json"))?;
    let mut final_state = ModelState::new(matrix_from(&model.w)?);
    final_state.iteration = model.iterations;
    final_state.saliency = gates(model.gates)?;
    Ok(TrainingTrace { regime, records, prune_events: Vec::new(), snapshots, masks: Vec::new(), final_state })
}

fn gates(g: Option<Vec<f64>>) -> Result<Option<SaliencyVector>, HarnessError> {
    g.map(SaliencyVector::new).transpose().map_err(|e| HarnessError::Malformed(e.to_string()))
}

/// One claim outcome: a report, or the reason the check could not run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimOutcome {
    pub seed: u64,
    pub claim: Claim,
    pub result: Result<TheoryReport, String>,
}

impl ClaimOutcome {
    pub fn passed(&self) -> bool {
        self.result.as_ref().is_ok_and(TheoryReport::passed)
    }
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    seed: u64,
    claim: Claim,
    verdict: &'static str,
    error: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySummary {
    pub outcomes: Vec<ClaimOutcome>,
    pub table: String,
}

impl VerifySummary {
    pub fn failed(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.passed()).count()
    }

    pub fn total(&self) -> usize {
        self.outcomes.len()
    }
}

fn verify_claim(
    cfg: &ExperimentConfig,
    layout: &Layout,
    seed: u64,
    claim: Claim,
    ds: &BiasedDataset,
) -> Result<Result<TheoryReport, String>, HarnessError> {
    let v = &cfg.verify;
    let tol = &v.tolerances;
    Ok(match claim {
        Claim::Prop2 => {
            let erm = load_trace(layout, Regime::Erm, seed)?;
            check_prop2(&erm, ds, (v.prop2_window[0], v.prop2_window[1]), tol).map_err(|e| e.to_string())
        }
        Claim::Prop3 => {
            let mut pcfg = cfg.train_config(Regime::Erm, seed);
            pcfg.learning_rate = v.plateau.learning_rate;
            pcfg.iterations = v.plateau.iterations;
            pcfg.snapshot_every = 0;
            match trainer::train(TrainingData::from_dataset(ds), &pcfg, Some(ds)) {
                Ok(trace) => {
                    let path = layout.verify_dir().join(format!("seed-{seed}")).join("plateau_trace.csv");
                    trace.write_csv(create(&path)?).map_err(|e| train_error("plateau", e))?;
                    check_prop3(&trace, ds, v.sigma_reduction, tol).map_err(|e| e.to_string())
                }
                Err(e) => Err(format!("plateau run: {e}")),
            }
        }
        Claim::Lemma1 => {
            let path = layout.run_dir(Regime::Sfp, seed).join("prune.jsonl");
            let lines: Vec<PruneLine> = read_jsonl(&path)?;
            match lines.iter().find(|l| l.iteration == v.lemma1_iteration) {
                Some(l) => {
                    let (wb, wa) = (matrix_from(&l.w_before)?, matrix_from(&l.w_after)?);
                    let (gb, ga) = (gates(l.gates_before.clone())?, gates(l.gates_after.clone())?);
                    check_lemma1((&wb, gb.as_ref()), (&wa, ga.as_ref()), ds, tol).map_err(|e| e.to_string())
                }
                None => Err(format!("no prune event at iteration {} in {}", v.lemma1_iteration, path.display())),
            }
        }
        Claim::Lemma2 => {
            let sweep = EtaSweep { factors: v.eta_factors.clone() };
            check_lemma2(ds, &sweep, &cfg.train_config(Regime::Sfp, seed), tol).map_err(|e| e.to_string())
        }
    })
}

/// Runs the configured claims per seed and writes `verify.jsonl` and
/// `summary.txt`. Claim failures are data, not errors; the caller maps them
/// to the exit code.
pub fn verify(cfg: &ExperimentConfig) -> Result<VerifySummary, HarnessError> {
    let layout = Layout::new(&cfg.output.directory);
    let per_seed: Vec<Result<Vec<ClaimOutcome>, HarnessError>> = cfg
        .seeds()
        .par_iter()
        .map(|&seed| {
            let (tr, _) = train_test(load_envs(cfg, &layout, seed)?)?;
            cfg.verify
                .claims
                .iter()
                .map(|&claim| Ok(ClaimOutcome { seed, claim, result: verify_claim(cfg, &layout, seed, claim, &tr)? }))
                .collect()
        })
        .collect();
    let outcomes: Vec<ClaimOutcome> = collect_ordered(per_seed)?.into_iter().flatten().collect();

    let mut jsonl = String::new();
    let mut table = String::new();
    let mut current = None;
    let mut block: Vec<TheoryReport> = Vec::new();
    let mut errors: Vec<String> = Vec::new();
    let flush = |table: &mut String, seed: Option<u64>, block: &mut Vec<TheoryReport>, errors: &mut Vec<String>| {
        if let Some(s) = seed {
            let _ = writeln!(table, "seed {s}");
            table.push_str(&summary_table(block));
            for e in errors.iter() {
                let _ = writeln!(table, "{e}");
            }
            table.push('\n');
        }
        block.clear();
        errors.clear();
    };
    for o in &outcomes {
        if current != Some(o.seed) {
            flush(&mut table, current, &mut block, &mut errors);
            current = Some(o.seed);
        }
        let line = match &o.result {
            Ok(r) => {
                block.push(r.clone());
                let mut v = serde_json::to_value(r)?;
                v.as_object_mut().expect("report is an object").insert("seed".into(), o.seed.into());
                serde_json::to_string(&v)?
            }
            Err(msg) => {
                errors.push(format!("{:<8} FAIL    {msg}", o.claim.name()));
                serde_json::to_string(&ErrorLine { seed: o.seed, claim: o.claim, verdict: "fail", error: msg })?
            }
        };
        jsonl.push_str(&line);
        jsonl.push('\n');
    }
    flush(&mut table, current, &mut block, &mut errors);
    let passed = outcomes.len() - outcomes.iter().filter(|o| !o.passed()).count();
    let _ = writeln!(table, "passed {passed}/{}", outcomes.len());
    let dir = layout.verify_dir();
    if cfg.output.wants(Format::Jsonl) {
        write_text(&dir.join("verify.jsonl"), &jsonl)?;
    }
    if cfg.output.wants(Format::Txt) {
        write_text(&dir.join("summary.txt"), &table)?;
    }
    Ok(VerifySummary { outcomes, table })
}

/// Published desk-unreachable reference: CNN results on Full-colored-mnist.
pub const REFERENCE_FOOTER: &str = "Reference trend, published values (Full-colored-mnist, CNN), not measured here: \
ERM train 93.96 / test 62.20, SFP train 97.48 / test 84.29.";

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeRow {
    pub regime: Regime,
    pub seeds: usize,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub final_id_loss: Option<f64>,
    pub final_ood_loss: Option<f64>,
    pub final_abs_gap: Option<f64>,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub rows: Vec<RegimeRow>,
    pub table: String,
}

fn mean_opt(v: &[Option<f64>]) -> Option<f64> {
    let vals: Option<Vec<f64>> = v.iter().copied().collect();
    vals.filter(|x| !x.is_empty()).map(|x| mean(&x))
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Per-iteration average, ID and OOD losses collected across seeds.
type CurvePoints = (Vec<f64>, Vec<Option<f64>>, Vec<Option<f64>>);

/// Accuracy/loss table across regimes plus per-regime mean loss curves.
pub fn report(cfg: &ExperimentConfig) -> Result<ReportSummary, HarnessError> {
    let layout = Layout::new(&cfg.output.directory);
    if cfg.train.regimes.is_empty() {
        return Err(HarnessError::MissingTrace("no regimes configured".into()));
    }
    let dir = layout.report_dir();
    let mut rows = Vec::new();
    for &regime in &cfg.train.regimes {
        let mut models = Vec::new();
        let mut curves: BTreeMap<usize, CurvePoints> = BTreeMap::new();
        for &seed in cfg.seeds() {
            let run = layout.run_dir(regime, seed);
            let model: ModelSidecar = read_json(&run.join("model.json"))?;
            for r in read_trace_csv(&run.join("trace.csv"))? {
                let e = curves.entry(r.iteration).or_default();
                e.0.push(r.avg_loss);
                e.1.push(r.id_loss);
                e.2.push(r.ood_loss);
            }
            models.push(model);
        }
        let gaps: Vec<Option<f64>> = models
            .iter()
            .map(|m| m.final_id_loss.zip(m.final_ood_loss).map(|(i, o)| (i - o).abs()))
            .collect();
        let pick = |f: fn(&ModelSidecar) -> Option<f64>| mean_opt(&models.iter().map(f).collect::<Vec<_>>());
        rows.push(RegimeRow {
            regime,
            seeds: models.len(),
            train_accuracy: pick(|m| m.train_accuracy),
            test_accuracy: pick(|m| m.test_accuracy),
            final_id_loss: pick(|m| m.final_id_loss),
            final_ood_loss: pick(|m| m.final_ood_loss),
            final_abs_gap: mean_opt(&gaps),
            test_loss: mean(&models.iter().map(|m| m.test_loss).collect::<Vec<_>>()),
        });
        if cfg.output.wants(Format::Csv) {
            let path = dir.join("curves").join(format!("{}.csv", regime.name()));
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["iteration", "avg_loss", "id_loss", "ood_loss", "seeds"])?;
            for (it, (avg, id, ood)) in &curves {
                w.write_record([
                    it.to_string(),
                    mean(avg).to_string(),
                    cell(mean_opt(id)),
                    cell(mean_opt(ood)),
                    avg.len().to_string(),
                ])?;
            }
            w.flush().map_err(|e| HarnessError::io(&path, e))?;
        }
    }

    let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
    let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<20} {:>5} {:>9} {:>9} {:>11} {:>11} {:>11} {:>11}",
        "regime", "seeds", "train_acc", "test_acc", "id_loss", "ood_loss", "|gap|", "test_loss"
    );
    for r in &rows {
        let _ = writeln!(
            table,
            "{:<20} {:>5} {:>9} {:>9} {:>11} {:>11} {:>11} {:>11}",
            r.regime.name(),
            r.seeds,
            pct(r.train_accuracy),
            pct(r.test_accuracy),
            num(r.final_id_loss),
            num(r.final_ood_loss),
            num(r.final_abs_gap),
            num(Some(r.test_loss))
        );
    }
    let _ = writeln!(table, "\n{REFERENCE_FOOTER}");
    if cfg.output.wants(Format::Csv) {
        let path = dir.join("accuracy.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record([
            "regime",
            "seeds",
            "train_accuracy",
            "test_accuracy",
            "final_id_loss",
            "final_ood_loss",
            "final_abs_gap",
            "test_loss",
        ])?;
        for r in &rows {
            w.write_record([
                r.regime.name().to_string(),
                r.seeds.to_string(),
                cell(r.train_accuracy),
                cell(r.test_accuracy),
                cell(r.final_id_loss),
                cell(r.final_ood_loss),
                cell(r.final_abs_gap),
                r.test_loss.to_string(),
            ])?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
    }
    if cfg.output.wants(Format::Txt) {
        write_text(&dir.join("accuracy.txt"), &table)?;
    }
    Ok(ReportSummary { rows, table })
}
