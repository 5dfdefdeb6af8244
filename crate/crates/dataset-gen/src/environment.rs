use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use subspace_core::{Matrix, SubspaceBasis};

use crate::{FeatureSplit, GenError};

/// How the optimal parameters `W*` read the three feature splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum TruthLayout {
    /// Every output channel mixes all three splits.
    Dense { invariant_share: f64 },
    /// Disjoint channel groups read IN, F′ and G′ respectively, the way a
    /// network dedicates some filters to objects and others to backgrounds.
    Channels { channels: [usize; 3], invariant_share: f64 },
}

impl TruthLayout {
    /// Channel-specialized layout with half the channels invariant and the
    /// rest split between spurious and unknown; dense below three channels.
    pub fn default_for(m: usize) -> Self {
        if m < 3 {
            return TruthLayout::Dense { invariant_share: 0.7 };
        }
        let inv = m.div_ceil(2);
        let sp = (m - inv).div_ceil(2);
        TruthLayout::Channels {
            channels: [inv, sp, m - inv - sp],
            invariant_share: 0.7,
        }
    }

    fn invariant_share(&self) -> f64 {
        match self {
            TruthLayout::Dense { invariant_share } | TruthLayout::Channels { invariant_share, .. } => {
                *invariant_share
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentConfig {
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub p_i: f64,
    /// Dimensions of (IN, F′, G′).
    pub split_dims: [usize; 3],
    pub noise_scale: f64,
    /// Whiten each population's latent draw so its second moment is exactly
    /// the identity. Removes sampling wobble from every closed-form check.
    pub whiten: bool,
    /// `None` picks [`TruthLayout::default_for`].
    pub truth: Option<TruthLayout>,
    pub seed: u64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            d: 32,
            m: 8,
            n: 2000,
            p_i: 0.8,
            split_dims: [8, 8, 8],
            noise_scale: 0.0,
            whiten: true,
            truth: None,
            seed: 0,
        }
    }
}

/// Optimal parameters and their coordinates in the two population frames.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `W*`, m×d.
    pub w_star: Matrix,
    /// `W*` in ID coordinates, `W*·[IN F′]`.
    pub a_star: Matrix,
    /// `W*` in OOD coordinates, `W*·[IN G′]`.
    pub b_star: Matrix,
    /// Whether `y = x·W*ᵀ` holds exactly. False once targets become labels.
    pub exact_targets: bool,
}

impl GroundTruth {
    pub fn new(w_star: Matrix, split: &FeatureSplit, exact_targets: bool) -> Self {
        let a_star = &w_star * split.id_basis().columns();
        let b_star = &w_star * split.ood_basis().columns();
        Self { w_star, a_star, b_star, exact_targets }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    Regression,
    Classification { classes: usize },
    /// Environment of a biased-ratio suite. Non-locked instances carry a
    /// randomly assigned background inside F′, so they are not spurious-free.
    Suite { classes: usize, bias_ratio: f64 },
}

impl DatasetKind {
    pub fn classes(&self) -> Option<usize> {
        match self {
            DatasetKind::Regression => None,
            DatasetKind::Classification { classes } | DatasetKind::Suite { classes, .. } => Some(*classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasedDataset {
    pub x: Matrix,
    pub y: Matrix,
    pub id_mask: Vec<bool>,
    pub p_i: f64,
    pub p_o: f64,
    pub split: FeatureSplit,
    pub truth: GroundTruth,
    pub seed: u64,
    pub kind: DatasetKind,
    /// Class of each instance for classification datasets.
    pub labels: Option<Vec<usize>>,
}

impl BiasedDataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    pub fn id_count(&self) -> usize {
        self.id_mask.iter().filter(|b| **b).count()
    }

    /// Indices where `id_mask == want`.
    pub fn indices(&self, want: bool) -> Vec<usize> {
        self.id_mask
            .iter()
            .enumerate()
            .filter(|(_, b)| **b == want)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn id_x(&self) -> Matrix {
        select_rows(&self.x, &self.indices(true))
    }

    pub fn ood_x(&self) -> Matrix {
        select_rows(&self.x, &self.indices(false))
    }

    /// `x·W*ᵀ`, the response an optimal model gives.
    pub fn truth_response(&self, x: &Matrix) -> Matrix {
        x * self.truth.w_star.transpose()
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.n();
        if self.id_mask.len() != n || self.y.nrows() != n {
            return Err("row counts of x, y and id_mask differ".into());
        }
        if (self.p_i + self.p_o - 1.0).abs() > 1e-12 {
            return Err(format!("p_i + p_o = {}", self.p_i + self.p_o));
        }
        let realized = self.id_count() as f64 / n as f64;
        if (realized - self.p_i).abs() > 1.0 / n as f64 + 1e-12 {
            return Err(format!("realized ID fraction {realized} vs p_i {}", self.p_i));
        }
        if self.split.max_cross_overlap() >= 1e-10 {
            return Err("feature split blocks are not orthogonal".into());
        }
        let leak = |rows: &[usize], basis: &SubspaceBasis| -> f64 {
            if rows.is_empty() || basis.dim() == 0 {
                return 0.0;
            }
            basis.coordinates(&select_rows(&self.x, rows)).amax()
        };
        if leak(&self.indices(true), &self.split.unknown) > 1e-10 {
            return Err("ID rows have an unknown-direction component".into());
        }
        let spurious_free_ood = !matches!(self.kind, DatasetKind::Suite { .. });
        if spurious_free_ood && leak(&self.indices(false), &self.split.spurious) > 1e-10 {
            return Err("OOD rows have a spurious-direction component".into());
        }
        if self.truth.exact_targets {
            let err = (self.truth_response(&self.x) - &self.y).amax();
            if err > 1e-9 {
                return Err(format!("targets deviate from x·W*ᵀ by {err:e}"));
            }
        }
        Ok(())
    }
}

pub(crate) fn select_rows(x: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Rescales `z` in place so that `zᵀz / rows = I`, when that is possible.
fn whiten(z: &mut Matrix) {
    let (rows, cols) = z.shape();
    if cols == 0 || rows < cols {
        return;
    }
    let second = z.transpose() * &*z / rows as f64;
    let Some(chol) = second.cholesky() else { return };
    let l = chol.l();
    if let Some(solved) = l.solve_lower_triangular(&z.transpose()) {
        *z = solved.transpose();
    }
}

/// `(rows×k) · basisᵀ` lifted into the ambient space.
fn lift(coords: &Matrix, basis: &SubspaceBasis) -> Matrix {
    coords * basis.columns().transpose()
}

fn build_truth<R: Rng + ?Sized>(
    layout: &TruthLayout,
    m: usize,
    split: &FeatureSplit,
    rng: &mut R,
) -> Result<Matrix, GenError> {
    let share = layout.invariant_share();
    let d = split.ambient_dim();
    let blocks = [&split.invariant, &split.spurious, &split.unknown];
    let energies = [share, 1.0 - share, 1.0 - share];
    let mut w = Matrix::zeros(m, d);
    let mut block = |row0: usize, rows: usize, which: usize, w: &mut Matrix| {
        let basis = blocks[which];
        if rows == 0 || basis.dim() == 0 {
            return;
        }
        let mut a = gaussian(rows, basis.dim(), rng);
        let norm = a.norm();
        a *= energies[which].sqrt() / norm;
        let lifted = lift(&a, basis);
        let mut view = w.rows_mut(row0, rows);
        view += lifted;
    };
    match layout {
        TruthLayout::Dense { .. } => {
            for which in 0..3 {
                block(0, m, which, &mut w);
            }
        }
        TruthLayout::Channels { channels, .. } => {
            if channels.iter().sum::<usize>() != m {
                return Err(GenError::BadLayout { channels: *channels, m });
            }
            let mut row0 = 0;
            for (which, rows) in channels.iter().enumerate() {
                block(row0, *rows, which, &mut w);
                row0 += rows;
            }
        }
    }
    Ok(w)
}

/// One biased regression environment.
///
/// ID rows are `IN·z_in + F′·z_sp`, OOD rows `IN·z_in + G′·z_un`, with an
/// optional isotropic residual of scale `noise_scale` inside each
/// population's own span. With the default truth scaling the mean squared
/// target norm is one, so the initial loss of a near-zero model is about one.
pub fn make_environment(cfg: &EnvironmentConfig) -> Result<BiasedDataset, GenError> {
    let [ki, ks, ku] = cfg.split_dims;
    let need = ki + ks + ku;
    if need > cfg.d {
        return Err(GenError::BadSplit { dims: cfg.split_dims, need, d: cfg.d });
    }
    if !(0.0..=1.0).contains(&cfg.p_i) || !cfg.p_i.is_finite() {
        return Err(GenError::BadProportion(cfg.p_i));
    }
    if cfg.n < 4 {
        return Err(GenError::TooFewInstances(cfg.n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let split = FeatureSplit::random(cfg.d, cfg.split_dims, &mut rng)?;
    let p = ((cfg.p_i * cfg.n as f64).round() as usize).min(cfg.n);
    let q = cfg.n - p;

    let population = |rows: usize, other: &SubspaceBasis, rng: &mut ChaCha8Rng| -> Matrix {
        let k = ki + other.dim();
        let mut z = gaussian(rows, k, rng);
        if cfg.whiten {
            whiten(&mut z);
        }
        if cfg.noise_scale > 0.0 {
            z += gaussian(rows, k, rng) * cfg.noise_scale;
        }
        let zi = z.columns(0, ki).into_owned();
        let zo = z.columns(ki, other.dim()).into_owned();
        lift(&zi, &split.invariant) + lift(&zo, other)
    };
    let x_id = population(p, &split.spurious, &mut rng);
    let x_ood = population(q, &split.unknown, &mut rng);
    let mut x = Matrix::zeros(cfg.n, cfg.d);
    x.rows_mut(0, p).copy_from(&x_id);
    x.rows_mut(p, q).copy_from(&x_ood);

    let layout = cfg.truth.clone().unwrap_or_else(|| TruthLayout::default_for(cfg.m));
    let w_star = build_truth(&layout, cfg.m, &split, &mut rng)?;
    let y = &x * w_star.transpose();
    let truth = GroundTruth::new(w_star, &split, true);
    let id_mask: Vec<bool> = (0..cfg.n).map(|i| i < p).collect();
    let p_i = p as f64 / cfg.n as f64;
    Ok(BiasedDataset {
        x,
        y,
        id_mask,
        p_i,
        p_o: 1.0 - p_i,
        split,
        truth,
        seed: cfg.seed,
        kind: DatasetKind::Regression,
        labels: None,
    })
}

/// One-hot class targets from `classes` fixed random projections of the
/// invariant component. Labels never depend on F′ or G′.
///
/// The projections are drawn from a stream derived from the dataset seed and
/// become the new `W*` (a score map whose argmax is the label).
pub fn classification_view(ds: &BiasedDataset, classes: usize) -> Result<BiasedDataset, GenError> {
    if classes < 2 {
        return Err(GenError::BadClasses(classes));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ds.seed);
    rng.set_stream(1);
    let ki = ds.split.invariant.dim();
    let proj = gaussian(classes, ki, &mut rng);
    let score_map = lift(&proj, &ds.split.invariant);
    let scores = &ds.x * score_map.transpose();
    let labels = argmax_rows(&scores);
    let mut out = ds.clone();
    out.y = one_hot(&labels, classes);
    out.truth = GroundTruth::new(score_map, &ds.split, false);
    out.kind = DatasetKind::Classification { classes };
    out.labels = Some(labels);
    Ok(out)
}

pub(crate) fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    (0..scores.nrows())
        .map(|i| {
            let mut best = 0;
            for j in 1..scores.ncols() {
                if scores[(i, j)] > scores[(i, best)] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub(crate) fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut y = Matrix::zeros(labels.len(), classes);
    for (i, c) in labels.iter().enumerate() {
        y[(i, *c)] = 1.0;
    }
    y
}

/// Concatenates environments that share a split and truth, e.g. the training
/// environments of a suite. `p_i` becomes the realized pooled ID fraction.
pub fn pool(datasets: &[BiasedDataset]) -> Result<BiasedDataset, GenError> {
    let first = datasets.first().ok_or(GenError::EmptyPool)?;
    let (d, m) = (first.d(), first.m());
    if let Some(bad) = datasets.iter().find(|ds| ds.d() != d || ds.m() != m) {
        return Err(GenError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            d,
            m,
            bad.d(),
            bad.m()
        )));
    }
    let n: usize = datasets.iter().map(BiasedDataset::n).sum();
    let mut x = Matrix::zeros(n, d);
    let mut y = Matrix::zeros(n, m);
    let mut id_mask = Vec::with_capacity(n);
    let mut labels = first.labels.as_ref().map(|_| Vec::with_capacity(n));
    let mut row = 0;
    for ds in datasets {
        x.rows_mut(row, ds.n()).copy_from(&ds.x);
        y.rows_mut(row, ds.n()).copy_from(&ds.y);
        id_mask.extend_from_slice(&ds.id_mask);
        if let (Some(all), Some(own)) = (labels.as_mut(), ds.labels.as_ref()) {
            all.extend_from_slice(own);
        }
        row += ds.n();
    }
    let p_i = id_mask.iter().filter(|b| **b).count() as f64 / n as f64;
    Ok(BiasedDataset {
        x,
        y,
        id_mask,
        p_i,
        p_o: 1.0 - p_i,
        split: first.split.clone(),
        truth: first.truth.clone(),
        seed: first.seed,
        kind: match first.kind {
            DatasetKind::Suite { classes, .. } => DatasetKind::Suite { classes, bias_ratio: p_i },
            ref other => other.clone(),
        },
        labels,
    })
}
