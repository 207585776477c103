//! Enlarged multivariate normal model `c·N_d(μ, Σ)` fitted by the two-stage
//! procedure: pseudo-spherical fit, profile scale, density-power fallback.
//!
//! Both stages are solved with the same reweighting fixed point. For the
//! current parameters, weights `w_i ∝ p_θ(x_i)^γ` give a weighted mean and
//! scatter `S_w`; the stationarity condition of `S_φ(p̃, p_θ)` for a normal
//! model then reads
//!
//! ```text
//! μ = Σ_i w_i x_i,        Σ = a·A / (a·A − b·I) · S_w
//! ```
//!
//! with `z = A/I`, `a = −φ'(z)` and `b = φ(z) − zφ'(z)`. For the
//! pseudo-spherical score the factor is exactly `1 + γ`; for the
//! density-power score it is `(1+γ)A / ((1+γ)A − γI)`. Every step is
//! guarded by backtracking so the driving score never increases.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::fit::{lowest_k, outlier_count, Branch, EnlargedFit, FitDiagnostics, FitOptions};
use crate::linalg::floor_covariance;
use crate::score::{GammaScoreConfig, LogStats, MvnParams, Phi, SampleSet, DENSITY_FLOOR};
use crate::stats::{mad, median, MAD_TO_SD};

const MAX_HALVINGS: usize = 40;

/// Score minimized by the fixed point at `c = 1`.
#[derive(Debug, Clone)]
enum Objective {
    Sphere { gamma: f64 },
    Holder(GammaScoreConfig),
}

impl Objective {
    fn gamma(&self) -> f64 {
        match self {
            Objective::Sphere { gamma } => *gamma,
            Objective::Holder(cfg) => cfg.gamma(),
        }
    }

    fn value(&self, st: &LogStats) -> f64 {
        match self {
            Objective::Sphere { gamma } => st.sphere(*gamma),
            Objective::Holder(cfg) => st.holder(1.0, cfg),
        }
    }

    /// Covariance inflation applied to the weighted scatter.
    fn inflation(&self, st: &LogStats) -> f64 {
        let g = self.gamma();
        let sphere_factor = 1.0 + g;
        let cfg = match self {
            Objective::Sphere { .. } => return sphere_factor,
            Objective::Holder(cfg) => cfg,
        };
        if matches!(cfg.phi(), Phi::Sphere) {
            return sphere_factor;
        }
        let (a_stat, i_stat) = (st.a(), st.i());
        let z = a_stat / i_stat;
        let dphi = cfg.phi_derivative(z);
        let a = -dphi;
        let b = cfg.phi_value(z) - z * dphi;
        let denom = a * a_stat - b * i_stat;
        let factor = a * a_stat / denom;
        if denom > 0.0 && factor.is_finite() && factor > 0.0 {
            factor
        } else {
            sphere_factor
        }
    }
}

struct Evaluated {
    params: MvnParams,
    log_p: Vec<f64>,
    stats: LogStats,
    score: f64,
}

fn evaluate(samples: &SampleSet, params: MvnParams, obj: &Objective) -> Result<Evaluated> {
    let g = obj.gamma();
    let log_p = params.log_densities(samples)?;
    let stats = LogStats::from_log_densities(&log_p, params.log_power_integral(g), g).require_positive()?;
    let score = obj.value(&stats);
    Ok(Evaluated { params, log_p, stats, score })
}

/// Average per-coordinate variance of the data; sets the collapse threshold.
fn data_scale(samples: &SampleSet) -> f64 {
    let x = samples.points();
    let n = x.nrows() as f64;
    let mut total = 0.0;
    for col in x.column_iter() {
        let m = col.mean();
        total += col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    }
    total / x.ncols() as f64
}

fn min_trace(samples: &SampleSet) -> f64 {
    1e-12 * data_scale(samples) * samples.dim() as f64
}

/// One reweighting step from `cur`, without the descent guard.
fn fixed_point_step(samples: &SampleSet, cur: &Evaluated, obj: &Objective, min_tr: f64) -> Result<MvnParams> {
    let g = obj.gamma();
    let floor = DENSITY_FLOOR.ln();
    let max_lp = cur.log_p.iter().copied().filter(|&lp| lp >= floor).fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> =
        cur.log_p.iter().map(|&lp| if lp < floor { 0.0 } else { (g * (lp - max_lp)).exp() }).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateScore);
    }
    w.iter_mut().for_each(|v| *v /= total);

    let x = samples.points();
    let d = samples.dim();
    let mut mean = DVector::zeros(d);
    for (i, row) in x.row_iter().enumerate() {
        mean += row.transpose() * w[i];
    }
    let mut scatter = DMatrix::zeros(d, d);
    for (i, row) in x.row_iter().enumerate() {
        let r = row.transpose() - &mean;
        scatter += &r * r.transpose() * w[i];
    }
    let cov = floor_covariance(&(scatter * obj.inflation(&cur.stats)), min_tr)?;
    MvnParams::new(mean, cov)
}

fn interpolate(from: &MvnParams, to: &MvnParams, t: f64, min_tr: f64) -> Result<MvnParams> {
    let mean = from.mean() + (to.mean() - from.mean()) * t;
    let cov = from.cov() + (to.cov() - from.cov()) * t;
    MvnParams::new(mean, floor_covariance(&cov, min_tr)?)
}

/// Largest parameter change in units of the current standard deviations.
fn standardized_change(old: &MvnParams, new: &MvnParams) -> f64 {
    let d = old.dim();
    let sd: Vec<f64> = (0..d).map(|j| old.cov()[(j, j)].sqrt()).collect();
    let mut worst: f64 = 0.0;
    for j in 0..d {
        worst = worst.max((new.mean()[j] - old.mean()[j]).abs() / sd[j]);
        for k in 0..d {
            worst = worst.max((new.cov()[(j, k)] - old.cov()[(j, k)]).abs() / (sd[j] * sd[k]));
        }
    }
    worst
}

/// Runs the guarded fixed point from one start.
fn descend(
    samples: &SampleSet,
    start: MvnParams,
    obj: &Objective,
    opts: &FitOptions,
) -> Result<(MvnParams, FitDiagnostics)> {
    let min_tr = min_trace(samples);
    let mut cur = evaluate(samples, start, obj)?;
    let mut trace = vec![cur.score];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let proposal = fixed_point_step(samples, &cur, obj, min_tr)?;
        let slack = 1e-14 * cur.score.abs();
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..MAX_HALVINGS {
            let cand = if t == 1.0 { proposal.clone() } else { interpolate(&cur.params, &proposal, t, min_tr)? };
            match evaluate(samples, cand, obj) {
                Ok(ev) if ev.score <= cur.score + slack => {
                    accepted = Some(ev);
                    break;
                }
                Ok(_) | Err(Error::DegenerateScore) => t *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some(next) = accepted else {
            // no descent direction left at working precision
            converged = true;
            break;
        };
        let change = standardized_change(&cur.params, &next.params);
        let score = next.score.min(cur.score);
        cur = next;
        cur.score = score;
        trace.push(score);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let diag = FitDiagnostics { iterations, converged, final_score: cur.score, score_trace: trace, best_start: 0 };
    Ok((cur.params, diag))
}

/// Coordinate-wise median with a MAD²-diagonal covariance; coordinates with
/// zero MAD fall back to their standard deviation.
fn robust_start(samples: &SampleSet) -> Result<MvnParams> {
    let x = samples.points();
    let d = samples.dim();
    let mut mean = DVector::zeros(d);
    let mut var = DVector::zeros(d);
    for (j, col) in x.column_iter().enumerate() {
        let v: Vec<f64> = col.iter().copied().collect();
        mean[j] = median(&v);
        let s = MAD_TO_SD * mad(&v);
        var[j] = if s > 0.0 {
            s * s
        } else {
            let m = col.mean();
            col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / v.len() as f64
        };
    }
    let cov = floor_covariance(&DMatrix::from_diagonal(&var), min_trace(samples))?;
    MvnParams::new(mean, cov)
}

fn perturbed_start(base: &MvnParams, rng: &mut ChaCha8Rng) -> Result<MvnParams> {
    let d = base.dim();
    let chol = base.cov().clone().cholesky().ok_or(Error::ModelSingular)?;
    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let mean = base.mean() + chol.l() * z * 0.5;
    let log_scale: f64 = Uniform::new(-0.5f64, 0.5).expect("valid range").sample(rng);
    MvnParams::new(mean, base.cov() * log_scale.exp())
}

fn starts(samples: &SampleSet, opts: &FitOptions) -> Result<Vec<MvnParams>> {
    let base = robust_start(samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = vec![base.clone()];
    for _ in 1..opts.n_starts {
        out.push(perturbed_start(&base, &mut rng)?);
    }
    Ok(out)
}

/// Runs every start and keeps the lowest final score (earliest start on ties).
fn multi_start(
    samples: &SampleSet,
    starts: Vec<MvnParams>,
    obj: &Objective,
    opts: &FitOptions,
) -> Result<(MvnParams, FitDiagnostics)> {
    let mut best: Option<(MvnParams, FitDiagnostics)> = None;
    let mut first_err = None;
    for (k, start) in starts.into_iter().enumerate() {
        match descend(samples, start, obj, opts) {
            Ok((p, mut diag)) => {
                diag.best_start = k;
                let better = best.as_ref().is_none_or(|(_, b)| diag.final_score < b.final_score);
                if better {
                    best = Some((p, diag));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or(Error::ModelSingular))
}

fn check_samples(samples: &SampleSet, opts: &FitOptions) -> Result<()> {
    opts.validate()?;
    if samples.len() <= samples.dim() {
        return Err(Error::InvalidInput(format!(
            "need more samples than dimensions (n = {}, d = {})",
            samples.len(),
            samples.dim()
        )));
    }
    if data_scale(samples) <= 0.0 {
        return Err(Error::ModelSingular);
    }
    Ok(())
}

/// Minimizes the empirical pseudo-spherical score over `(μ, Σ)`.
pub fn fit_sphere_mvn(
    samples: &SampleSet,
    cfg: &GammaScoreConfig,
    opts: &FitOptions,
) -> Result<(MvnParams, FitDiagnostics)> {
    check_samples(samples, opts)?;
    let obj = Objective::Sphere { gamma: cfg.gamma() };
    multi_start(samples, starts(samples, opts)?, &obj, opts)
}

/// Minimizes the empirical density-power score with `c` fixed at one.
pub fn fit_power_mvn(
    samples: &SampleSet,
    cfg: &GammaScoreConfig,
    opts: &FitOptions,
) -> Result<(MvnParams, FitDiagnostics)> {
    check_samples(samples, opts)?;
    let obj = Objective::Holder(GammaScoreConfig::power(cfg.gamma())?);
    multi_start(samples, starts(samples, opts)?, &obj, opts)
}

/// Fits `c·p_θ` subject to `0 < c ≤ 1`.
///
/// The pseudo-spherical solution `θ̃` is computed first. When its profile
/// scale `c(θ̃) = A/I` is at most one, `(c(θ̃), θ̃)` is returned. Otherwise
/// `c` sits on the boundary and `θ` is refitted under the configured Hölder
/// score at `c = 1`, starting from `θ̃` and the usual starts.
pub fn fit_enlarged(samples: &SampleSet, cfg: &GammaScoreConfig, opts: &FitOptions) -> Result<EnlargedFit<MvnParams>> {
    let (sphere_theta, sphere_diag) = fit_sphere_mvn(samples, cfg, opts)?;
    let g = cfg.gamma();
    let st = LogStats::from_log_densities(&sphere_theta.log_densities(samples)?, sphere_theta.log_power_integral(g), g)
        .require_positive()?;
    let c_raw = st.c_raw();
    if c_raw <= 1.0 {
        return Ok(EnlargedFit {
            c_hat: c_raw,
            c_raw,
            final_score: st.holder(c_raw, cfg),
            theta_hat: sphere_theta,
            branch: Branch::Interior,
            iterations: sphere_diag.iterations,
            converged: sphere_diag.converged,
        });
    }
    let obj = Objective::Holder(cfg.clone());
    let mut candidates = vec![sphere_theta];
    candidates.extend(starts(samples, opts)?);
    let (theta, diag) = multi_start(samples, candidates, &obj, opts)?;
    Ok(EnlargedFit {
        c_hat: 1.0,
        c_raw,
        final_score: diag.final_score,
        theta_hat: theta,
        branch: Branch::Boundary,
        iterations: sphere_diag.iterations + diag.iterations,
        converged: sphere_diag.converged && diag.converged,
    })
}

/// Indices of the `⌊n(1−ĉ) + 0.5⌋` samples with the smallest fitted density.
pub fn detect_outliers(samples: &SampleSet, fit: &EnlargedFit<MvnParams>) -> Result<Vec<usize>> {
    let k = outlier_count(samples.len(), fit.c_hat);
    if k == 0 {
        return Ok(Vec::new());
    }
    Ok(lowest_k(&fit.theta_hat.log_densities(samples)?, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{power_score, sphere_score};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn normal_samples(n: usize, d: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SampleSet::new(DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    #[test]
    fn symmetric_pair_gives_zero_mean() {
        let s = SampleSet::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let cfg = GammaScoreConfig::power(0.1).unwrap();
        let opts = FitOptions { n_starts: 1, ..Default::default() };
        let (p, diag) = fit_sphere_mvn(&s, &cfg, &opts).unwrap();
        assert!(p.mean()[0].abs() < 1e-12);
        assert!(diag.converged);
    }

    #[test]
    fn identical_samples_are_singular() {
        let s = SampleSet::from_rows(&[vec![2.0], vec![2.0]]).unwrap();
        let cfg = GammaScoreConfig::power(0.1).unwrap();
        assert!(matches!(fit_power_mvn(&s, &cfg, &FitOptions::default()), Err(Error::ModelSingular)));
        assert!(matches!(fit_sphere_mvn(&s, &cfg, &FitOptions::default()), Err(Error::ModelSingular)));
    }

    #[test]
    fn too_few_samples_rejected() {
        let s = SampleSet::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let cfg = GammaScoreConfig::power(0.1).unwrap();
        assert!(matches!(fit_sphere_mvn(&s, &cfg, &FitOptions::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sphere_fit_descends_monotonically() {
        let s = normal_samples(300, 2, 3);
        let cfg = GammaScoreConfig::power(0.5).unwrap();
        let (p, diag) = fit_sphere_mvn(&s, &cfg, &FitOptions::default()).unwrap();
        for w in diag.score_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs());
        }
        assert_relative_eq!(sphere_score(&s, &p, &cfg).unwrap(), diag.final_score, max_relative = 1e-12);
    }

    #[test]
    fn near_zero_gamma_power_fit_is_mle() {
        let s = normal_samples(400, 2, 11);
        let cfg = GammaScoreConfig::power(1e-4).unwrap();
        let (p, _) = fit_power_mvn(&s, &cfg, &FitOptions::default()).unwrap();
        let x = s.points();
        let n = x.nrows() as f64;
        let mean = x.row_mean().transpose();
        let mut cov = DMatrix::zeros(2, 2);
        for row in x.row_iter() {
            let r = row.transpose() - &mean;
            cov += &r * r.transpose() / n;
        }
        assert!((p.mean() - mean).amax() < 1e-2);
        assert!((p.cov() - cov).amax() < 1e-2);
    }

    #[test]
    fn enlarged_fit_reports_consistent_branch() {
        let cfg = GammaScoreConfig::power(0.1).unwrap();
        for seed in 0..6 {
            let s = normal_samples(200, 2, 100 + seed);
            let fit = fit_enlarged(&s, &cfg, &FitOptions::with_seed(seed)).unwrap();
            assert!(fit.c_hat > 0.0 && fit.c_hat <= 1.0);
            match fit.branch {
                Branch::Interior => assert!(fit.c_raw <= 1.0 && fit.c_hat == fit.c_raw),
                Branch::Boundary => assert!(fit.c_raw > 1.0 && fit.c_hat == 1.0),
            }
            let score = power_score(&s, &fit.theta_hat, fit.c_hat, &cfg).unwrap().value;
            assert_relative_eq!(score, fit.final_score, max_relative = 1e-10);
        }
    }

    #[test]
    fn detect_outliers_picks_lowest_densities() {
        let s = normal_samples(50, 2, 5);
        let fit = EnlargedFit {
            c_hat: 0.8,
            c_raw: 0.8,
            theta_hat: MvnParams::standard(2),
            branch: Branch::Interior,
            iterations: 0,
            converged: true,
            final_score: 0.0,
        };
        let idx = detect_outliers(&s, &fit).unwrap();
        assert_eq!(idx.len(), 10);
        let lp = fit.theta_hat.log_densities(&s).unwrap();
        let cutoff = idx.iter().map(|&i| lp[i]).fold(f64::NEG_INFINITY, f64::max);
        let others = (0..50).filter(|i| !idx.contains(i)).map(|i| lp[i]);
        assert!(others.into_iter().all(|v| v >= cutoff));
        let whole = EnlargedFit { c_hat: 1.0, ..fit };
        assert!(detect_outliers(&s, &whole).unwrap().is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = normal_samples(80, 2, 9).points().clone();
        for i in 0..16 {
            s[(i, 0)] = 10.0 + 10.0 * rng.sample::<f64, _>(StandardNormal);
        }
        let s = SampleSet::new(s).unwrap();
        let cfg = GammaScoreConfig::power(0.1).unwrap();
        let a = fit_enlarged(&s, &cfg, &FitOptions { n_starts: 1, ..Default::default() }).unwrap();
        let b = fit_enlarged(&s, &cfg, &FitOptions { n_starts: 1, ..Default::default() }).unwrap();
        assert_eq!(a.c_hat.to_bits(), b.c_hat.to_bits());
        assert_eq!(a.theta_hat.mean(), b.theta_hat.mean());
    }
}
