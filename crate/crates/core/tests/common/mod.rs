//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ratiofit::{MvnParams, SampleSet};

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

pub fn simpson_2d(f: impl Fn(f64, f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    simpson(|x| simpson(|y| f(x, y), a, b, n), a, b, n)
}

/// Normal density written out directly, without the library's Cholesky path.
pub fn normal_pdf_1d(x: f64, mu: f64, var: f64) -> f64 {
    (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// `cov = [s11, s12, s22]`.
pub fn normal_pdf_2d(x: f64, y: f64, mu: [f64; 2], cov: [f64; 3]) -> f64 {
    let [s11, s12, s22] = cov;
    let det = s11 * s22 - s12 * s12;
    let (dx, dy) = (x - mu[0], y - mu[1]);
    let q = (s22 * dx * dx - 2.0 * s12 * dx * dy + s11 * dy * dy) / det;
    (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
}

pub fn mvn(mean: &[f64], cov_rows: &[f64]) -> MvnParams {
    let d = mean.len();
    MvnParams::new(DVector::from_column_slice(mean), DMatrix::from_row_slice(d, d, cov_rows)).unwrap()
}

/// `n` draws from `N(mean, cov)` through an explicit Cholesky factor.
pub fn draw(params: &MvnParams, n: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = params.cov().clone().cholesky().unwrap().l();
    let d = params.dim();
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let row = params.mean() + &l * z;
        x.row_mut(i).copy_from(&row.transpose());
    }
    SampleSet::new(x).unwrap()
}

/// Mean and standard error of a sample.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}
