//! Synthetic data generators with planted outliers.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::Result;
use crate::regression::{RegData, RegParams};
use crate::score::SampleSet;

/// Which variables an outlier replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContaminationMode {
    /// Only the dependent variable.
    YOnly,
    /// Both the independent and the dependent variables.
    Xy,
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("finite positive standard deviation")
}

/// Per-sample Bernoulli(`ratio`) selection.
pub(crate) fn bernoulli_plant(rng: &mut ChaCha8Rng, n: usize, ratio: f64) -> Vec<usize> {
    (0..n).filter(|_| rng.random::<f64>() < ratio).collect()
}

/// `n` draws from `N_d(0, I)`; exactly `⌊ratio·n⌋` randomly chosen rows are
/// replaced coordinate-wise by `N(10, 10²)` draws.
pub fn gen_density_synth(seed: u64, n: usize, d: usize, ratio: f64) -> Result<(SampleSet, Vec<usize>)> {
    let mut rng = rng(seed);
    let mut x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let k = ((ratio * n as f64) + 1e-9).floor() as usize;
    let mut plant = sample(&mut rng, n, k.min(n)).into_vec();
    plant.sort_unstable();
    let out = normal(10.0, 10.0);
    for &i in &plant {
        for j in 0..d {
            x[(i, j)] = out.sample(&mut rng);
        }
    }
    Ok((SampleSet::new(x)?, plant))
}

fn toy_clean_row(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let x: f64 = rng.sample(StandardNormal);
    let e: f64 = rng.sample(StandardNormal);
    (x, 1.0 + 10.0 * x + e)
}

/// Simple linear model `y = 1 + 10x + N(0, 1)` with `x ~ N(0, 1)`. Outliers
/// (Bernoulli(`ratio`) per sample) have `x ~ N(1, 0.8²)`, `y = |N(0, 70²)|`.
pub fn gen_reg_toy(seed: u64, n: usize, ratio: f64) -> Result<(RegData, Vec<usize>)> {
    let mut rng = rng(seed);
    let mut x = DMatrix::zeros(n, 1);
    let mut y = DVector::zeros(n);
    let mut plant = Vec::new();
    let (ox, oy) = (normal(1.0, 0.8), normal(0.0, 70.0));
    for i in 0..n {
        if rng.random::<f64>() < ratio {
            x[(i, 0)] = ox.sample(&mut rng);
            y[i] = oy.sample(&mut rng).abs();
            plant.push(i);
        } else {
            let (xi, yi) = toy_clean_row(&mut rng);
            x[(i, 0)] = xi;
            y[i] = yi;
        }
    }
    Ok((RegData::new(x, y)?, plant))
}

/// Clean draws from the toy model.
pub fn gen_reg_toy_clean(seed: u64, m: usize) -> Result<RegData> {
    let mut rng = rng(seed);
    let rows: Vec<(f64, f64)> = (0..m).map(|_| toy_clean_row(&mut rng)).collect();
    RegData::new_unchecked_size(DMatrix::from_fn(m, 1, |i, _| rows[i].0), DVector::from_fn(m, |i, _| rows[i].1))
}

pub fn toy_true_params() -> RegParams {
    RegParams { beta: DVector::from_element(1, 10.0), intercept: 1.0, sigma: 1.0 }
}

/// One synthetic regression replication.
#[derive(Debug, Clone)]
pub struct SynthRegression {
    pub train: RegData,
    pub test: RegData,
    pub plant: Vec<usize>,
    pub true_params: RegParams,
}

/// Noise standard deviation of the synthetic regression target (variance 1/4).
pub const SYNTH_NOISE_SD: f64 = 0.5;
/// Standard deviation of resampled outlier `y` values (variance 10⁸).
pub const SYNTH_OUTLIER_Y_SD: f64 = 1e4;
/// Standard deviation of resampled outlier `x` coordinates (variance 10⁴).
pub const SYNTH_OUTLIER_X_SD: f64 = 1e2;

fn synth_clean(rng: &mut ChaCha8Rng, m: usize, theta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let d = theta.len();
    let x = DMatrix::from_fn(m, d, |_, _| rng.random::<f64>());
    let noise = normal(0.0, SYNTH_NOISE_SD);
    let mut y = &x * theta;
    y.iter_mut().for_each(|v| *v += noise.sample(rng));
    (x, y)
}

/// `y = xᵀθ₀ + N(0, 1/4)` with `θ₀ ~ N_d(0, I)` drawn per call and
/// `x ~ U[0,1]^d`. Contaminated rows get `y ~ N(0, 10⁸)` and, in `Xy` mode,
/// every `x` coordinate from `N(0, 10⁴)`. The test set is clean.
pub fn gen_reg_synth(
    seed: u64,
    n: usize,
    n_test: usize,
    d: usize,
    ratio: f64,
    mode: ContaminationMode,
) -> Result<SynthRegression> {
    let mut rng = rng(seed);
    let theta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (mut x, mut y) = synth_clean(&mut rng, n, &theta);
    let plant = bernoulli_plant(&mut rng, n, ratio);
    let (ox, oy) = (normal(0.0, SYNTH_OUTLIER_X_SD), normal(0.0, SYNTH_OUTLIER_Y_SD));
    for &i in &plant {
        if mode == ContaminationMode::Xy {
            for j in 0..d {
                x[(i, j)] = ox.sample(&mut rng);
            }
        }
        y[i] = oy.sample(&mut rng);
    }
    let (tx, ty) = synth_clean(&mut rng, n_test, &theta);
    Ok(SynthRegression {
        train: RegData::new(x, y)?,
        test: RegData::new_unchecked_size(tx, ty)?,
        plant,
        true_params: RegParams { beta: theta, intercept: 0.0, sigma: SYNTH_NOISE_SD },
    })
}

/// Synthetic regression whose contamination depends on `x₁`: rows with
/// `x₁ ≥ 0.5` are replaced (y only) with probability `ratio_high`, others never.
/// The expected ratio is `ratio_high / 2`.
pub fn gen_reg_heterogeneous(seed: u64, n: usize, d: usize, ratio_high: f64) -> Result<SynthRegression> {
    let mut rng = rng(seed);
    let theta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (x, mut y) = synth_clean(&mut rng, n, &theta);
    let oy = normal(0.0, SYNTH_OUTLIER_Y_SD);
    let mut plant = Vec::new();
    for i in 0..n {
        let u: f64 = rng.random();
        if x[(i, 0)] >= 0.5 && u < ratio_high {
            y[i] = oy.sample(&mut rng);
            plant.push(i);
        }
    }
    let (tx, ty) = synth_clean(&mut rng, 1, &theta);
    Ok(SynthRegression {
        train: RegData::new(x, y)?,
        test: RegData::new_unchecked_size(tx, ty)?,
        plant,
        true_params: RegParams { beta: theta, intercept: 0.0, sigma: SYNTH_NOISE_SD },
    })
}
