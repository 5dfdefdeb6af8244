//! Experiment configuration: one TOML file with `dataset`, `train`, `verify`
//! and `output` blocks. See `docs/config-schema.md` for every field.

use std::path::{Path, PathBuf};

use identification::SigmaReduction;
use serde::{Deserialize, Serialize};
use theory_verifier::{Claim, Tolerances};
use trainer::{EtaMode, LossKind, PenaltyNorm, PruneSchedule, Regime, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("bad override `{0}`: expected key=value with a dotted key")]
    Override(String),
    #[error("bad seed list `{0}`: use `3`, `1,4,9` or `1..5`")]
    Seeds(String),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKindConfig {
    /// One regression environment; training and test set coincide.
    Regression,
    /// Biased-ratio classification suite; the last ratio is the test set.
    Suite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetBlock {
    pub kind: DatasetKindConfig,
    /// Base seed. Run seed `s` generates its data from `seed + s`.
    pub seed: Option<u64>,
    pub d: usize,
    pub m: usize,
    /// Instances: the whole set for regression, per environment for suites.
    pub n: usize,
    pub p_i: f64,
    pub split_dims: [usize; 3],
    pub noise_scale: f64,
    pub whiten: bool,
    pub classes: usize,
    pub bias_ratios: Vec<f64>,
    pub background_scale: f64,
    pub background_noise: f64,
}

impl Default for DatasetBlock {
    fn default() -> Self {
        Self {
            kind: DatasetKindConfig::Regression,
            seed: None,
            d: 32,
            m: 8,
            n: 2000,
            p_i: 0.8,
            split_dims: [8, 8, 8],
            noise_scale: 0.0,
            whiten: true,
            classes: 2,
            bias_ratios: vec![0.8, 0.6, 0.0],
            background_scale: 1.0,
            background_noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBlock {
    pub regimes: Vec<Regime>,
    pub seeds: Option<Vec<u64>>,
    pub learning_rate: f64,
    pub iterations: usize,
    pub eta_mode: EtaMode,
    pub prune: PruneSchedule,
    pub penalty_norm: PenaltyNorm,
    /// Defaults to squared loss for regression, cross-entropy for suites.
    pub loss: Option<LossKind>,
    /// Defaults to the configured ID proportion of the training data.
    pub p_i_prior: Option<f64>,
    pub sigma_prior: f64,
    pub delta_slack: f64,
    pub use_saliency: bool,
    pub init_scale: f64,
    pub snapshot_every: usize,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            regimes: vec![Regime::Erm, Regime::Sfp],
            seeds: None,
            learning_rate: t.learning_rate,
            iterations: t.iterations,
            eta_mode: t.eta_mode,
            prune: t.prune,
            penalty_norm: t.penalty_norm,
            loss: None,
            p_i_prior: None,
            sigma_prior: t.sigma_prior,
            delta_slack: t.delta_slack,
            use_saliency: t.use_saliency,
            init_scale: t.init_scale,
            snapshot_every: t.snapshot_every,
        }
    }
}

/// Dedicated ERM run for the plateau loss-gap claim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauBlock {
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for PlateauBlock {
    fn default() -> Self {
        Self { learning_rate: 0.4, iterations: 600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    pub claims: Vec<Claim>,
    pub tolerances: Tolerances,
    /// Inclusive iteration window of the directional-gradient check.
    pub prop2_window: [usize; 2],
    pub sigma_reduction: SigmaReduction,
    /// Prune event of the SFP run whose risk-gap ratio is checked.
    pub lemma1_iteration: usize,
    /// η values of the penalty-bound sweep, as multiples of 2e.
    pub eta_factors: Vec<f64>,
    pub plateau: PlateauBlock,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            claims: vec![Claim::Prop2, Claim::Prop3, Claim::Lemma1, Claim::Lemma2],
            tolerances: Tolerances::default(),
            prop2_window: [10, 200],
            sigma_reduction: SigmaReduction::Mean,
            lemma1_iteration: 200,
            eta_factors: theory_verifier::EtaSweep::default().factors,
            plateau: PlateauBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Jsonl,
    Txt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    /// Optional artifacts to emit. Trace CSVs and run sidecars are always
    /// written because later stages read them.
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: PathBuf::from("runs"), formats: vec![Format::Csv, Format::Jsonl, Format::Txt] }
    }
}

impl OutputBlock {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetBlock,
    pub train: TrainBlock,
    pub verify: VerifyBlock,
    pub output: OutputBlock,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn parse_error(path: &str, text: &str, e: &toml::de::Error) -> ConfigError {
    let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
    ConfigError::Parse { path: path.to_string(), line, column, message: e.message().trim().to_string() }
}

/// Config key behind a trainer validation message.
fn train_field(msg: &str) -> &'static str {
    match msg.split_whitespace().next() {
        Some("learning_rate") => "train.learning_rate",
        Some("energy_keep") => "train.prune.energy_keep",
        Some("p_i_prior") => "train.p_i_prior",
        Some("sigma_prior") => "train.sigma_prior",
        Some("delta_slack") => "train.delta_slack",
        _ => "train.eta_mode",
    }
}

/// Parses a `key=value` override. The value is read as a TOML value and
/// falls back to a bare string.
pub fn parse_override(arg: &str) -> Result<(Vec<String>, toml::Value), ConfigError> {
    let (key, raw) = arg.split_once('=').ok_or_else(|| ConfigError::Override(arg.to_string()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(arg.to_string()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| invalid(&path.join("."), format!("`{p}` is not a table")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// `3`, `1,4,9`, `1..5` (inclusive) or any comma-separated mix.
pub fn parse_seeds(arg: &str) -> Result<Vec<u64>, ConfigError> {
    let bad = || ConfigError::Seeds(arg.to_string());
    let mut out = Vec::new();
    for part in arg.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if b < a {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    Ok(out)
}

/// Command-line adjustments applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Adjustments {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub overrides: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &str, adj: &Adjustments) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = if adj.overrides.is_empty() {
            toml::from_str(text).map_err(|e| parse_error(origin, text, &e))?
        } else {
            let mut table: toml::Table = toml::from_str(text).map_err(|e| parse_error(origin, text, &e))?;
            for arg in &adj.overrides {
                let (path, value) = parse_override(arg)?;
                apply_override(&mut table, &path, value)?;
            }
            let merged = toml::to_string(&table).expect("tables serialize");
            toml::from_str(&merged).map_err(|e| parse_error("<config with overrides>", &merged, &e))?
        };
        if let Some(out) = &adj.out {
            cfg.output.directory = out.clone();
        }
        if let Some(seeds) = &adj.seeds {
            cfg.train.seeds = Some(seeds.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, adj: &Adjustments) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text, &path.display().to_string(), adj)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seeds(&self) -> &[u64] {
        self.train.seeds.as_deref().unwrap_or(&[])
    }

    pub fn base_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(0)
    }

    /// Seed of the data generated for run seed `s`.
    pub fn data_seed(&self, s: u64) -> u64 {
        self.base_seed().wrapping_add(s)
    }

    pub fn loss(&self) -> LossKind {
        self.train.loss.unwrap_or(match self.dataset.kind {
            DatasetKindConfig::Regression => LossKind::Squared,
            DatasetKindConfig::Suite => LossKind::CrossEntropy,
        })
    }

    /// Nominal ID proportion of the training data, known from the config.
    pub fn nominal_p_i(&self) -> f64 {
        match self.dataset.kind {
            DatasetKindConfig::Regression => self.dataset.p_i,
            DatasetKindConfig::Suite => {
                let r = &self.dataset.bias_ratios;
                if r.len() <= 1 {
                    r.first().copied().unwrap_or(0.0)
                } else {
                    r[..r.len() - 1].iter().sum::<f64>() / (r.len() - 1) as f64
                }
            }
        }
    }

    pub fn train_config(&self, regime: Regime, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            iterations: t.iterations,
            regime,
            eta_mode: t.eta_mode,
            prune: t.prune,
            p_i_prior: t.p_i_prior.unwrap_or_else(|| self.nominal_p_i()),
            sigma_prior: t.sigma_prior,
            delta_slack: t.delta_slack,
            penalty_norm: t.penalty_norm,
            loss: self.loss(),
            use_saliency: t.use_saliency,
            init_scale: t.init_scale,
            snapshot_every: t.snapshot_every,
            keep_masks: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let ds = &self.dataset;
        if ds.seed.is_none() {
            return Err(ConfigError::MissingField("dataset.seed"));
        }
        if self.train.seeds.is_none() {
            return Err(ConfigError::MissingField("train.seeds"));
        }
        if self.seeds().is_empty() {
            return Err(invalid("train.seeds", "needs at least one seed"));
        }
        let mut sorted = self.seeds().to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("train.seeds", "seeds must be distinct"));
        }
        let need: usize = ds.split_dims.iter().sum();
        if need > ds.d {
            return Err(invalid("dataset.split_dims", format!("sum {need} exceeds d = {}", ds.d)));
        }
        if ds.n < 4 {
            return Err(invalid("dataset.n", "needs at least 4 instances"));
        }
        match ds.kind {
            DatasetKindConfig::Regression => {
                if !(0.0..=1.0).contains(&ds.p_i) {
                    return Err(invalid("dataset.p_i", "must lie in [0, 1]"));
                }
                if ds.m == 0 {
                    return Err(invalid("dataset.m", "must be positive"));
                }
            }
            DatasetKindConfig::Suite => {
                if ds.bias_ratios.is_empty() {
                    return Err(invalid("dataset.bias_ratios", "needs at least one ratio"));
                }
                if ds.bias_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
                    return Err(invalid("dataset.bias_ratios", "ratios must lie in [0, 1]"));
                }
                if ds.classes < 2 {
                    return Err(invalid("dataset.classes", "needs at least 2 classes"));
                }
            }
        }
        if !ds.noise_scale.is_finite() || ds.noise_scale < 0.0 {
            return Err(invalid("dataset.noise_scale", "must be finite and non-negative"));
        }
        if let Some(p) = self.train.p_i_prior {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid("train.p_i_prior", "must lie in [0, 1]"));
            }
        }
        for regime in [Regime::Erm, Regime::MagnitudeBaseline, Regime::Sfp] {
            if let Err(trainer::TrainError::Config(msg)) = self.train_config(regime, 0).validate() {
                return Err(invalid(train_field(&msg), msg));
            }
        }
        let v = &self.verify;
        if v.prop2_window[0] > v.prop2_window[1] {
            return Err(invalid("verify.prop2_window", "start exceeds end"));
        }
        if v.plateau.iterations < 11 || v.plateau.learning_rate.is_nan() || v.plateau.learning_rate <= 0.0 {
            return Err(invalid("verify.plateau", "needs a positive learning rate and at least 11 iterations"));
        }
        Ok(())
    }
}
