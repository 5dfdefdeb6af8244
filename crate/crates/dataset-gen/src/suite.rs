use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use subspace_core::Matrix;

use crate::environment::{argmax_rows, one_hot};
use crate::{BiasedDataset, DatasetKind, FeatureSplit, GenError, GroundTruth};

/// Settings shared by every environment of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub d: usize,
    pub classes: usize,
    pub split_dims: [usize; 3],
    /// Norm of each class's background vector in F′.
    pub background_scale: f64,
    /// Per-coordinate jitter around the background vector.
    pub background_noise: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            d: 32,
            classes: 2,
            split_dims: [8, 8, 8],
            background_scale: 1.0,
            background_noise: 0.05,
            seed: 0,
        }
    }
}

/// Training environments plus the held-out test environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSuite {
    pub train_envs: Vec<BiasedDataset>,
    pub test_env: BiasedDataset,
    pub bias_ratios: Vec<f64>,
}

/// One environment per ratio; the last ratio is the test environment.
///
/// Within an environment with ratio `r`, the first `round(r·n)` instances get
/// the background of their own class (class-locked, the ID population); the
/// rest get the background of a uniformly random class. Labels come from the
/// invariant component alone. A single ratio yields one environment that
/// serves as both training and test set.
pub fn make_suite(
    bias_ratios: &[f64],
    per_env_size: usize,
    common: &SuiteConfig,
) -> Result<EnvironmentSuite, GenError> {
    if bias_ratios.is_empty() {
        return Err(GenError::EmptySuite);
    }
    if let Some(bad) = bias_ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(GenError::BadProportion(*bad));
    }
    if common.classes < 2 {
        return Err(GenError::BadClasses(common.classes));
    }
    if per_env_size < 4 {
        return Err(GenError::TooFewInstances(per_env_size));
    }
    let need: usize = common.split_dims.iter().sum();
    if need > common.d {
        return Err(GenError::BadSplit { dims: common.split_dims, need, d: common.d });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let split = FeatureSplit::random(common.d, common.split_dims, &mut rng)?;
    let [ki, ks, _] = common.split_dims;
    let proj = Matrix::from_fn(common.classes, ki, |_, _| rng.sample(StandardNormal));
    let mut backgrounds = Matrix::from_fn(common.classes, ks, |_, _| rng.sample(StandardNormal));
    for mut row in backgrounds.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row *= common.background_scale / norm;
        }
    }
    let score_map = &proj * split.invariant.columns().transpose();
    let truth = GroundTruth::new(score_map, &split, false);

    let mut envs = Vec::with_capacity(bias_ratios.len());
    for (j, &ratio) in bias_ratios.iter().enumerate() {
        let mut env_rng = ChaCha8Rng::seed_from_u64(common.seed);
        env_rng.set_stream(10 + j as u64);
        let n = per_env_size;
        let z_in = Matrix::from_fn(n, ki, |_, _| env_rng.sample(StandardNormal));
        let labels = argmax_rows(&(&z_in * proj.transpose()));
        let locked = ((ratio * n as f64).round() as usize).min(n);
        let mut z_sp = Matrix::zeros(n, ks);
        for i in 0..n {
            let bg = if i < locked {
                labels[i]
            } else {
                env_rng.random_range(0..common.classes)
            };
            for k in 0..ks {
                let jitter: f64 = env_rng.sample(StandardNormal);
                z_sp[(i, k)] = backgrounds[(bg, k)] + common.background_noise * jitter;
            }
        }
        let x = &z_in * split.invariant.columns().transpose() + &z_sp * split.spurious.columns().transpose();
        let p_i = locked as f64 / n as f64;
        envs.push(BiasedDataset {
            x,
            y: one_hot(&labels, common.classes),
            id_mask: (0..n).map(|i| i < locked).collect(),
            p_i,
            p_o: 1.0 - p_i,
            split: split.clone(),
            truth: truth.clone(),
            seed: common.seed,
            kind: DatasetKind::Suite { classes: common.classes, bias_ratio: ratio },
            labels: Some(labels),
        });
    }
    let test_env = envs.pop().expect("non-empty");
    let train_envs = if envs.is_empty() { vec![test_env.clone()] } else { envs };
    Ok(EnvironmentSuite { train_envs, test_env, bias_ratios: bias_ratios.to_vec() })
}
