//! Reference regression estimators: least squares, least absolute
//! deviations, Huber, least trimmed squares and Geman-McClure.
//!
//! All of them fit `y = xᵀβ + β₁` with an intercept and report a residual
//! scale in the `sigma` field of [`RegParams`].

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fit::FitOptions;
use crate::linalg::{weighted_least_squares, with_intercept};
use crate::regression::{RegData, RegParams};
use crate::stats::{mad, MAD_TO_SD};

pub const DEFAULT_HUBER_K: f64 = 1.345;
pub const LTS_RANDOM_STARTS: usize = 500;
pub const LTS_INITIAL_CSTEPS: usize = 10;
pub const LTS_REFINED: usize = 10;

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    L2,
    L1,
    Huber { k: f64 },
    Lts { trim_ratio: f64 },
    GemMc,
}

impl BaselineKind {
    pub fn huber() -> Self {
        BaselineKind::Huber { k: DEFAULT_HUBER_K }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::L2 => "L2",
            BaselineKind::L1 => "L1",
            BaselineKind::Huber { .. } => "Huber",
            BaselineKind::Lts { .. } => "LTS",
            BaselineKind::GemMc => "GemMc",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineKind::Huber { k } if !(k > 0.0) => {
                Err(Error::InvalidInput(format!("huber_k must be positive, got {k}")))
            }
            BaselineKind::Lts { trim_ratio } if !(0.0..=0.5).contains(&trim_ratio) => {
                Err(Error::InvalidInput(format!("trim_ratio must lie in [0, 0.5], got {trim_ratio}")))
            }
            _ => Ok(()),
        }
    }
}

/// Coefficients with the intercept last, as used by the design `[x | 1]`.
pub(crate) type Coefs = DVector<f64>;

pub(crate) fn residuals(design: &DMatrix<f64>, y: &DVector<f64>, coefs: &Coefs) -> Vec<f64> {
    (y - design * coefs).iter().copied().collect()
}

pub(crate) fn coefs_to_params(coefs: &Coefs, sigma: f64) -> RegParams {
    let d = coefs.len() - 1;
    RegParams { beta: coefs.rows(0, d).into_owned(), intercept: coefs[d], sigma }
}

pub(crate) fn mad_scale(r: &[f64]) -> f64 {
    MAD_TO_SD * mad(r)
}

fn rms(r: &[f64], w: Option<&[f64]>) -> f64 {
    match w {
        None => (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt(),
        Some(w) => {
            let sw: f64 = w.iter().sum();
            (r.iter().zip(w).map(|(v, wi)| wi * v * v).sum::<f64>() / sw).sqrt()
        }
    }
}

/// Record of an iteratively reweighted least squares run.
#[derive(Debug, Clone)]
pub(crate) struct IrlsRun {
    pub coefs: Coefs,
    #[cfg_attr(not(test), allow(dead_code))]
    pub objective_trace: Vec<f64>,
}

/// Guarded IRLS for a fixed loss: weights from the current residuals, a
/// weighted least-squares proposal, and step halving if the objective rises.
pub(crate) fn irls(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    start: Coefs,
    weights: impl Fn(&[f64]) -> Vec<f64>,
    objective: impl Fn(&[f64]) -> f64,
    scale: f64,
    opts: &FitOptions,
) -> Result<IrlsRun> {
    let mut coefs = start;
    let mut r = residuals(design, y, &coefs);
    let mut obj = objective(&r);
    let mut trace = vec![obj];
    for _ in 0..opts.max_iter {
        let w = weights(&r);
        let proposal = weighted_least_squares(design, y, Some(&w))?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &coefs + (&proposal - &coefs) * t;
            let rc = residuals(design, y, &cand);
            let oc = objective(&rc);
            if oc <= obj + 1e-14 * obj.abs() {
                accepted = Some((cand, rc, oc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, rc, oc)) = accepted else { break };
        let shift = (design * (&cand - &coefs)).amax();
        coefs = cand;
        r = rc;
        obj = oc.min(obj);
        trace.push(obj);
        if shift <= opts.tol * scale {
            break;
        }
    }
    Ok(IrlsRun { coefs, objective_trace: trace })
}

fn ols(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<Coefs> {
    weighted_least_squares(design, y, None)
}

fn y_scale(y: &DVector<f64>) -> f64 {
    let v: Vec<f64> = y.iter().copied().collect();
    let s = mad_scale(&v);
    if s > 0.0 {
        s
    } else {
        rms(&v, None).max(1e-300)
    }
}

/// Least absolute deviations through IRLS on `√(r² + ε²)`, `ε = 1e-8·MAD(y)`.
pub(crate) fn lad_run(design: &DMatrix<f64>, y: &DVector<f64>, opts: &FitOptions) -> Result<IrlsRun> {
    let yv: Vec<f64> = y.iter().copied().collect();
    let eps = 1e-8 * (mad(&yv) + 1e-12);
    let start = ols(design, y)?;
    irls(
        design,
        y,
        start,
        |r| r.iter().map(|v| 1.0 / (v * v + eps * eps).sqrt()).collect(),
        |r| r.iter().map(|v| (v * v + eps * eps).sqrt()).sum(),
        y_scale(y),
        opts,
    )
}

fn huber_weights(r: &[f64], scale: f64, k: f64) -> Vec<f64> {
    r.iter()
        .map(|v| {
            let u = (v / scale).abs();
            if u <= k {
                1.0
            } else {
                k / u
            }
        })
        .collect()
}

fn scale_floor(y: &DVector<f64>) -> f64 {
    let yv: Vec<f64> = y.iter().copied().collect();
    1e-8 * (mad(&yv) + 1e-12)
}

fn fit_huber(design: &DMatrix<f64>, y: &DVector<f64>, k: f64, opts: &FitOptions) -> Result<RegParams> {
    let floor = scale_floor(y);
    let mut coefs = ols(design, y)?;
    let mut scale = floor;
    for _ in 0..opts.max_iter {
        let r = residuals(design, y, &coefs);
        scale = mad_scale(&r).max(floor);
        let w = huber_weights(&r, scale, k);
        let next = weighted_least_squares(design, y, Some(&w))?;
        let shift = (design * (&next - &coefs)).amax();
        coefs = next;
        if shift <= opts.tol * scale {
            break;
        }
    }
    let r = residuals(design, y, &coefs);
    let w = huber_weights(&r, scale, k);
    Ok(coefs_to_params(&coefs, rms(&r, Some(&w))))
}

fn gm_weights(r: &[f64], scale: f64) -> Vec<f64> {
    r.iter().map(|v| (1.0 + (v / scale).powi(2)).powi(-2)).collect()
}

fn gm_rho(r: &[f64], scale: f64) -> f64 {
    r.iter()
        .map(|v| {
            let u2 = (v / scale).powi(2);
            u2 / (1.0 + u2)
        })
        .sum()
}

/// Geman-McClure IRLS at fixed scale.
pub(crate) fn gm_fixed_scale(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    start: Coefs,
    scale: f64,
    opts: &FitOptions,
) -> Result<IrlsRun> {
    irls(design, y, start, |r| gm_weights(r, scale), |r| gm_rho(r, scale), scale, opts)
}

/// Alternates fixed-scale Geman-McClure IRLS with a MAD rescale.
fn gm_refine(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    start: Coefs,
    floor: f64,
    opts: &FitOptions,
) -> Result<(Coefs, f64)> {
    let mut coefs = start;
    let mut scale = mad_scale(&residuals(design, y, &coefs)).max(floor);
    for _ in 0..50 {
        coefs = gm_fixed_scale(design, y, coefs, scale, opts)?.coefs;
        let next = mad_scale(&residuals(design, y, &coefs)).max(floor);
        let done = (next - scale).abs() <= 1e-8 * scale;
        scale = next;
        if done {
            break;
        }
    }
    Ok((coefs, scale))
}

/// Exact fits through random subsets of `p` rows; singular subsets are skipped.
pub(crate) fn elemental_fits(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Coefs> {
    let (n, p) = design.shape();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let rows: Vec<usize> = sample(rng, n, p).into_vec();
        let sub_x = design.select_rows(rows.iter());
        let sub_y = DVector::from_iterator(p, rows.iter().map(|&i| y[i]));
        if let Ok(c) = weighted_least_squares(&sub_x, &sub_y, None) {
            out.push(c);
        }
    }
    out
}

/// Indices of the `k` best candidates under `score` (lower is better), stable on ties.
pub(crate) fn best_k_by(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].is_finite()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn fit_gemmc(design: &DMatrix<f64>, y: &DVector<f64>, opts: &FitOptions) -> Result<RegParams> {
    let floor = scale_floor(y);
    let mut candidates = vec![lad_run(design, y, opts)?.coefs];
    if opts.n_starts > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let pool = elemental_fits(design, y, opts.n_subsets, &mut rng);
        let scores: Vec<f64> = pool.iter().map(|c| mad_scale(&residuals(design, y, c))).collect();
        candidates.extend(best_k_by(&scores, opts.n_starts - 1).into_iter().map(|i| pool[i].clone()));
    }
    let mut best: Option<(Coefs, f64)> = None;
    for start in candidates {
        let (coefs, scale) = gm_refine(design, y, start, floor, opts)?;
        if best.as_ref().is_none_or(|(_, s)| scale < *s) {
            best = Some((coefs, scale));
        }
    }
    let (coefs, scale) = best.expect("at least one candidate");
    let r = residuals(design, y, &coefs);
    let w = gm_weights(&r, scale);
    Ok(coefs_to_params(&coefs, rms(&r, Some(&w))))
}

/// Sum of the `h` smallest squared residuals and the rows attaining it.
fn trimmed(r: &[f64], h: usize) -> (f64, Vec<usize>) {
    let mut idx: Vec<usize> = (0..r.len()).collect();
    idx.sort_by(|&a, &b| (r[a] * r[a]).total_cmp(&(r[b] * r[b])).then(a.cmp(&b)));
    idx.truncate(h);
    let sse = idx.iter().map(|&i| r[i] * r[i]).sum();
    (sse, idx)
}

/// Concentration steps: refit least squares on the `h` smallest squared
/// residuals. Returns the final coefficients and the trimmed objective after
/// each step (starting with the value at `start`).
pub(crate) fn lts_c_steps(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    start: Coefs,
    h: usize,
    max_steps: usize,
) -> (Coefs, Vec<f64>) {
    let mut coefs = start;
    let (mut sse, mut rows) = trimmed(&residuals(design, y, &coefs), h);
    let mut trace = vec![sse];
    for _ in 0..max_steps {
        let sub_x = design.select_rows(rows.iter());
        let sub_y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
        let Ok(next) = weighted_least_squares(&sub_x, &sub_y, None) else { break };
        let (next_sse, next_rows) = trimmed(&residuals(design, y, &next), h);
        if next_sse >= sse {
            break;
        }
        coefs = next;
        sse = next_sse;
        let same = next_rows == rows;
        rows = next_rows;
        trace.push(sse);
        if same {
            break;
        }
    }
    (coefs, trace)
}

fn lts_subset_size(n: usize, trim_ratio: f64) -> usize {
    ((n as f64) * (1.0 - trim_ratio) - 1e-9).ceil().max(0.0) as usize
}

fn fit_lts(design: &DMatrix<f64>, y: &DVector<f64>, trim_ratio: f64, opts: &FitOptions) -> Result<RegParams> {
    let (n, p) = design.shape();
    let h = lts_subset_size(n, trim_ratio).min(n);
    if h < p {
        return Err(Error::InvalidTrim { h, p });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pool = elemental_fits(design, y, LTS_RANDOM_STARTS.max(opts.n_starts), &mut rng);
    if pool.is_empty() {
        return Err(Error::DesignSingular);
    }
    let short: Vec<(Coefs, f64)> = pool
        .into_iter()
        .map(|c| {
            let (c, trace) = lts_c_steps(design, y, c, h, LTS_INITIAL_CSTEPS);
            (c, *trace.last().expect("non-empty trace"))
        })
        .collect();
    let scores: Vec<f64> = short.iter().map(|(_, s)| *s).collect();
    let mut best: Option<(Coefs, f64)> = None;
    for i in best_k_by(&scores, LTS_REFINED) {
        let (c, trace) = lts_c_steps(design, y, short[i].0.clone(), h, opts.max_iter);
        let sse = *trace.last().expect("non-empty trace");
        if best.as_ref().is_none_or(|(_, s)| sse < *s) {
            best = Some((c, sse));
        }
    }
    let (coefs, sse) = best.expect("at least one refined start");
    Ok(coefs_to_params(&coefs, (sse / h as f64).sqrt()))
}

/// Fits one of the reference estimators.
pub fn fit_baseline(data: &RegData, spec: &BaselineKind, opts: &FitOptions) -> Result<RegParams> {
    spec.validate()?;
    opts.validate()?;
    let design = with_intercept(data.x());
    let y = data.y();
    match *spec {
        BaselineKind::L2 => {
            let coefs = ols(&design, y)?;
            let r = residuals(&design, y, &coefs);
            Ok(coefs_to_params(&coefs, rms(&r, None)))
        }
        BaselineKind::L1 => {
            let coefs = lad_run(&design, y, opts)?.coefs;
            let r = residuals(&design, y, &coefs);
            Ok(coefs_to_params(&coefs, rms(&r, None)))
        }
        BaselineKind::Huber { k } => fit_huber(&design, y, k, opts),
        BaselineKind::Lts { trim_ratio } => fit_lts(&design, y, trim_ratio, opts),
        BaselineKind::GemMc => fit_gemmc(&design, y, opts),
    }
}

/// Root mean squared prediction error on `test`.
pub fn rmse(params: &RegParams, test: &RegData) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if test.dim() != params.beta.len() {
        return Err(Error::DimensionMismatch { expected: params.beta.len(), got: test.dim() });
    }
    let pred = params.predict(test.x());
    let ss: f64 = (test.y() - pred).iter().map(|v| v * v).sum();
    Ok((ss / test.len() as f64).sqrt())
}
