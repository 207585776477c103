//! Robust linear regression with the enlarged Gaussian location-scale model
//! `c·p_θ(y|x)`, `p_θ(y|x) = φ((y − xᵀβ − β₁)/σ)/σ`.
//!
//! For a location-scale model `∫ p_θ(y|x)^{1+γ} dy = σ^{−γ} ∫ s(z)^{1+γ} dz`
//! does not depend on `x`, so the conditional scores need no integration at
//! all. The same code path serves homogeneous and `x`-dependent
//! contamination; in the latter case `1 − ĉ` estimates the expected ratio.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{best_k_by, coefs_to_params, elemental_fits, lad_run, mad_scale, residuals, Coefs};
use crate::error::{Error, Result};
use crate::fit::{lowest_k, outlier_count, Branch, EnlargedFit, FitDiagnostics, FitOptions};
use crate::linalg::{weighted_least_squares, with_intercept};
use crate::score::{LogStats, DENSITY_FLOOR};
use crate::stats::mad;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_HALVINGS: usize = 40;
/// Reweighting steps applied to each elemental subset before screening.
const SCREEN_STEPS: usize = 2;

/// Training pairs `(x_i, y_i)`.
#[derive(Debug, Clone)]
pub struct RegData {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl RegData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y.len() });
        }
        if d == 0 {
            return Err(Error::InvalidInput("at least one independent variable required".into()));
        }
        if n < d + 2 {
            return Err(Error::InvalidInput(format!("need n >= d + 2 rows (n = {n}, d = {d})")));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("regression data contains NaN or Inf".into()));
        }
        Ok(Self { x, y })
    }

    /// Test sets may be smaller than `d + 2`; only finiteness is checked.
    pub fn new_unchecked_size(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("regression data contains NaN or Inf".into()));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx`, in order.
    pub fn select(&self, idx: &[usize]) -> RegData {
        RegData {
            x: self.x.select_rows(idx.iter()),
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i])),
        }
    }

    /// Scale below which `σ` is considered collapsed: `1e-8·(MAD(y) + 1e-12)`.
    pub fn sigma_floor(&self) -> f64 {
        let y: Vec<f64> = self.y.iter().copied().collect();
        1e-8 * (mad(&y) + 1e-12)
    }
}

/// Slope vector, intercept and noise scale of the location-scale model.
#[derive(Debug, Clone, PartialEq)]
pub struct RegParams {
    pub beta: DVector<f64>,
    pub intercept: f64,
    pub sigma: f64,
}

impl RegParams {
    pub fn new(beta: DVector<f64>, intercept: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { beta, intercept, sigma })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.beta + DVector::from_element(x.nrows(), self.intercept)
    }

    fn coefs(&self) -> Coefs {
        let d = self.beta.len();
        DVector::from_fn(d + 1, |j, _| if j < d { self.beta[j] } else { self.intercept })
    }

    /// `ln p_θ(y_i|x_i)` for every row.
    pub fn log_densities(&self, data: &RegData) -> Result<Vec<f64>> {
        if data.dim() != self.beta.len() {
            return Err(Error::DimensionMismatch { expected: self.beta.len(), got: data.dim() });
        }
        let r = data.y() - self.predict(data.x());
        Ok(log_densities_from_residuals(r.as_slice(), self.sigma))
    }
}

fn log_densities_from_residuals(r: &[f64], sigma: f64) -> Vec<f64> {
    let c = -sigma.ln() - 0.5 * LN_2PI;
    r.iter().map(|v| c - 0.5 * (v / sigma).powi(2)).collect()
}

/// `∫ s(z)^{1+γ} dz` for the standard normal `s`.
pub fn gaussian_power_constant(gamma: f64) -> f64 {
    (-0.5 * gamma * LN_2PI - 0.5 * (1.0 + gamma).ln()).exp()
}

fn log_i(sigma: f64, gamma: f64) -> f64 {
    -gamma * sigma.ln() - 0.5 * gamma * LN_2PI - 0.5 * (1.0 + gamma).ln()
}

/// `A = (1/n) Σ p_θ(y_i|x_i)^γ` and `I = σ^{−γ}(2π)^{−γ/2}(1+γ)^{−1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondScoreStats {
    pub a: f64,
    pub i: f64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")))
    }
}

fn log_stats(data: &RegData, params: &RegParams, gamma: f64) -> Result<LogStats> {
    check_gamma(gamma)?;
    let floor = data.sigma_floor();
    if !(params.sigma > floor) {
        return Err(Error::ScaleDegenerate { floor });
    }
    let lp = params.log_densities(data)?;
    Ok(LogStats::from_log_densities(&lp, log_i(params.sigma, gamma), gamma))
}

pub fn cond_score_stats(data: &RegData, params: &RegParams, gamma: f64) -> Result<CondScoreStats> {
    let st = log_stats(data, params, gamma)?;
    Ok(CondScoreStats { a: st.a(), i: st.i() })
}

/// Empirical conditional density-power score `−(1+γ)c^γ A + γ c^{1+γ} I`.
pub fn cond_power_score(data: &RegData, params: &RegParams, c: f64, gamma: f64) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("scale c must be positive, got {c}")));
    }
    Ok(log_stats(data, params, gamma)?.power(c, gamma))
}

/// Profile scale `c_reg(θ) = A/I` and `min{1, c_reg(θ)}`.
pub fn c_reg(data: &RegData, params: &RegParams, gamma: f64) -> Result<(f64, f64)> {
    let raw = log_stats(data, params, gamma)?.require_positive()?.c_raw();
    Ok((raw, raw.min(1.0)))
}

/// Empirical conditional pseudo-spherical score `−A / I^{γ/(1+γ)}`.
pub fn cond_sphere_score(data: &RegData, params: &RegParams, gamma: f64) -> Result<f64> {
    Ok(log_stats(data, params, gamma)?.require_positive()?.sphere(gamma))
}

#[derive(Debug, Clone, Copy)]
enum Objective {
    Sphere,
    Power,
}

struct State {
    coefs: Coefs,
    sigma: f64,
    log_p: Vec<f64>,
    stats: LogStats,
    score: f64,
}

struct Problem<'a> {
    data: &'a RegData,
    design: DMatrix<f64>,
    gamma: f64,
    floor: f64,
    objective: Objective,
}

impl Problem<'_> {
    fn new(data: &RegData, gamma: f64, objective: Objective) -> Result<Problem<'_>> {
        check_gamma(gamma)?;
        Ok(Problem { data, design: with_intercept(data.x()), gamma, floor: data.sigma_floor(), objective })
    }

    fn evaluate(&self, coefs: Coefs, sigma: f64) -> Result<State> {
        if !(sigma > self.floor) {
            return Err(Error::ScaleDegenerate { floor: self.floor });
        }
        let resid = residuals(&self.design, self.data.y(), &coefs);
        let log_p = log_densities_from_residuals(&resid, sigma);
        let stats = LogStats::from_log_densities(&log_p, log_i(sigma, self.gamma), self.gamma).require_positive()?;
        let score = match self.objective {
            Objective::Sphere => stats.sphere(self.gamma),
            Objective::Power => stats.power(1.0, self.gamma),
        };
        Ok(State { coefs, sigma, log_p, stats, score })
    }

    /// Weighted least squares for the coefficients, then the scale update.
    fn propose(&self, cur: &State) -> Result<(Coefs, f64)> {
        let g = self.gamma;
        let floor = DENSITY_FLOOR.ln();
        let max_lp = cur.log_p.iter().copied().filter(|&v| v >= floor).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> =
            cur.log_p.iter().map(|&lp| if lp < floor { 0.0 } else { (g * (lp - max_lp)).exp() }).collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateScore);
        }
        let coefs = weighted_least_squares(&self.design, self.data.y(), Some(&w))?;
        let r = residuals(&self.design, self.data.y(), &coefs);
        let s2 = r.iter().zip(&w).map(|(ri, wi)| wi * ri * ri).sum::<f64>() / total;
        let factor = match self.objective {
            Objective::Sphere => 1.0 + g,
            Objective::Power => {
                let (a, i) = (cur.stats.a(), cur.stats.i());
                let denom = (1.0 + g) * a - g * i;
                if denom > 0.0 {
                    (1.0 + g) * a / denom
                } else {
                    1.0 + g
                }
            }
        };
        let sigma = (factor * s2).sqrt();
        if !(sigma > self.floor) {
            return Err(Error::ScaleDegenerate { floor: self.floor });
        }
        Ok((coefs, sigma))
    }

    fn descend(&self, coefs: Coefs, sigma: f64, max_iter: usize, tol: f64) -> Result<(State, FitDiagnostics)> {
        let mut cur = self.evaluate(coefs, sigma)?;
        let mut trace = vec![cur.score];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iter {
            iterations += 1;
            let (pc, ps) = self.propose(&cur)?;
            let slack = 1e-14 * cur.score.abs();
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let c = &cur.coefs + (&pc - &cur.coefs) * t;
                let s = cur.sigma + (ps - cur.sigma) * t;
                match self.evaluate(c, s) {
                    Ok(st) if st.score <= cur.score + slack => {
                        accepted = Some(st);
                        break;
                    }
                    Ok(_) | Err(Error::DegenerateScore) => t *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            let Some(mut next) = accepted else {
                converged = true;
                break;
            };
            let shift = (&self.design * (&next.coefs - &cur.coefs)).amax() / cur.sigma;
            let change = shift.max((next.sigma - cur.sigma).abs() / cur.sigma);
            next.score = next.score.min(cur.score);
            cur = next;
            trace.push(cur.score);
            if change < tol {
                converged = true;
                break;
            }
        }
        let diag = FitDiagnostics { iterations, converged, final_score: cur.score, score_trace: trace, best_start: 0 };
        Ok((cur, diag))
    }

    /// Robust starting points: the least-absolute-deviations fit, then the
    /// best-scoring random elemental fits after a few reweighting steps.
    fn starts(&self, opts: &FitOptions) -> Result<Vec<(Coefs, f64)>> {
        let y = self.data.y();
        let lad = lad_run(&self.design, y, opts)?.coefs;
        let mut out = vec![(lad.clone(), self.start_scale(&lad)?)];
        if opts.n_starts <= 1 {
            return Ok(out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut screened = Vec::new();
        let mut scores = Vec::new();
        for c in elemental_fits(&self.design, y, opts.n_subsets, &mut rng) {
            let Ok(s) = self.start_scale(&c) else { continue };
            if let Ok((st, _)) = self.descend(c, s, SCREEN_STEPS, 0.0) {
                scores.push(st.score);
                screened.push((st.coefs, st.sigma));
            }
        }
        out.extend(best_k_by(&scores, opts.n_starts - 1).into_iter().map(|i| screened[i].clone()));
        Ok(out)
    }

    fn start_scale(&self, coefs: &Coefs) -> Result<f64> {
        let s = mad_scale(&residuals(&self.design, self.data.y(), coefs));
        if s > self.floor {
            Ok(s)
        } else {
            Err(Error::ScaleDegenerate { floor: self.floor })
        }
    }

    fn multi_start(&self, starts: Vec<(Coefs, f64)>, opts: &FitOptions) -> Result<(State, FitDiagnostics)> {
        let mut best: Option<(State, FitDiagnostics)> = None;
        let mut first_err = None;
        for (k, (c, s)) in starts.into_iter().enumerate() {
            match self.descend(c, s, opts.max_iter, opts.tol) {
                Ok((st, mut diag)) => {
                    diag.best_start = k;
                    if best.as_ref().is_none_or(|(b, _)| st.score < b.score) {
                        best = Some((st, diag));
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        best.ok_or_else(|| first_err.unwrap_or(Error::ScaleDegenerate { floor: self.floor }))
    }

    fn run(&self, opts: &FitOptions) -> Result<(State, FitDiagnostics)> {
        opts.validate()?;
        let starts = self.starts(opts)?;
        self.multi_start(starts, opts)
    }
}

fn to_params(st: &State) -> RegParams {
    coefs_to_params(&st.coefs, st.sigma)
}

/// Minimizes the conditional pseudo-spherical score by reweighted least squares.
pub fn fit_sphere_reg(data: &RegData, gamma: f64, opts: &FitOptions) -> Result<(RegParams, FitDiagnostics)> {
    let (st, diag) = Problem::new(data, gamma, Objective::Sphere)?.run(opts)?;
    Ok((to_params(&st), diag))
}

/// Minimizes the conditional density-power score at `c = 1`.
pub fn fit_power_reg(data: &RegData, gamma: f64, opts: &FitOptions) -> Result<(RegParams, FitDiagnostics)> {
    let (st, diag) = Problem::new(data, gamma, Objective::Power)?.run(opts)?;
    Ok((to_params(&st), diag))
}

/// Fits `c·p_θ(y|x)` with `0 < c ≤ 1` by the two-stage procedure.
pub fn fit_enlarged_reg(data: &RegData, gamma: f64, opts: &FitOptions) -> Result<EnlargedFit<RegParams>> {
    let sphere = Problem::new(data, gamma, Objective::Sphere)?;
    let (st, sdiag) = sphere.run(opts)?;
    let c_raw = st.stats.c_raw();
    if c_raw <= 1.0 {
        return Ok(EnlargedFit {
            c_hat: c_raw,
            c_raw,
            final_score: st.stats.power(c_raw, gamma),
            theta_hat: to_params(&st),
            branch: Branch::Interior,
            iterations: sdiag.iterations,
            converged: sdiag.converged,
        });
    }
    let power = Problem::new(data, gamma, Objective::Power)?;
    let mut starts = vec![(st.coefs.clone(), st.sigma)];
    starts.extend(power.starts(opts)?);
    let (pst, pdiag) = power.multi_start(starts, opts)?;
    Ok(EnlargedFit {
        c_hat: 1.0,
        c_raw,
        final_score: pst.score,
        theta_hat: to_params(&pst),
        branch: Branch::Boundary,
        iterations: sdiag.iterations + pdiag.iterations,
        converged: sdiag.converged && pdiag.converged,
    })
}

/// Indices of the `⌊n(1−ĉ) + 0.5⌋` pairs with the smallest `p_θ̂(y_i|x_i)`.
pub fn detect_outliers_reg(data: &RegData, fit: &EnlargedFit<RegParams>) -> Result<Vec<usize>> {
    let k = outlier_count(data.len(), fit.c_hat);
    if k == 0 {
        return Ok(Vec::new());
    }
    Ok(lowest_k(&fit.theta_hat.log_densities(data)?, k))
}

impl RegParams {
    /// Coefficient vector `[β, β₁]`.
    pub fn coefficients(&self) -> DVector<f64> {
        self.coefs()
    }
}
