//! Density-power, pseudo-spherical and Hölder scores for multivariate normal
//! models evaluated on empirical samples.
//!
//! Every score here depends on the samples and the model only through two
//! statistics:
//!
//! * `A = (1/n) Σ p_θ(x_i)^γ`, the empirical mean of the powered density,
//! * `I = ∫ p_θ(x)^{1+γ} dx`, available in closed form for the normal family.
//!
//! `A` is accumulated in log space so that samples far in the tails (which
//! underflow `f64`) simply contribute zero.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::log_sum_exp;

/// Model densities below this value are treated as exactly zero.
pub const DENSITY_FLOOR: f64 = 1e-300;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Generator `φ` of a Hölder score `S_φ(f, g) = φ(⟨fg^γ⟩/⟨g^{1+γ}⟩)·⟨g^{1+γ}⟩`.
#[derive(Clone)]
pub enum Phi {
    /// `φ(z) = γ − (1+γ)z`, giving the density-power score.
    Power,
    /// `φ(z) = −z^{1+γ}`, the lower bound; gives `−(−S_sphere)^{1+γ}`.
    Sphere,
    /// User supplied generator, validated when the config is built.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phi::Power => f.write_str("Power"),
            Phi::Sphere => f.write_str("Sphere"),
            Phi::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Exponent `γ > 0` together with the Hölder generator.
#[derive(Debug, Clone)]
pub struct GammaScoreConfig {
    gamma: f64,
    phi: Phi,
}

impl GammaScoreConfig {
    pub fn new(gamma: f64, phi: Phi) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
        }
        let cfg = Self { gamma, phi };
        if matches!(cfg.phi, Phi::Custom(_)) {
            cfg.validate_phi()?;
        }
        Ok(cfg)
    }

    pub fn power(gamma: f64) -> Result<Self> {
        Self::new(gamma, Phi::Power)
    }

    pub fn sphere(gamma: f64) -> Result<Self> {
        Self::new(gamma, Phi::Sphere)
    }

    pub fn custom(gamma: f64, phi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        Self::new(gamma, Phi::Custom(Arc::new(phi)))
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn phi(&self) -> &Phi {
        &self.phi
    }

    /// Same generator with a different exponent.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(gamma, self.phi.clone())
    }

    /// Checks `φ(1) = −1` and `φ(z) ≥ −z^{1+γ}` on the grid `z = 0, 0.01, …, 10`.
    /// Monotonicity of `z ↦ z^{1+γ} φ(u/z)` on `(0, u)` is assumed, not checked.
    fn validate_phi(&self) -> Result<()> {
        let at_one = self.phi_value(1.0);
        if !((at_one + 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidPhi(format!("phi(1) = {at_one}, expected -1")));
        }
        for k in 0..=1000 {
            let z = k as f64 * 0.01;
            let v = self.phi_value(z);
            let bound = -z.powf(1.0 + self.gamma);
            if !v.is_finite() || v < bound - 1e-12 * (1.0 + bound.abs()) {
                return Err(Error::InvalidPhi(format!("phi({z}) = {v} is below the lower bound {bound}")));
            }
        }
        Ok(())
    }

    /// `φ(z)`; negative arguments (numerical noise) are clamped to zero.
    pub fn phi_value(&self, z: f64) -> f64 {
        let z = z.max(0.0);
        let g = self.gamma;
        match &self.phi {
            Phi::Power => g - (1.0 + g) * z,
            Phi::Sphere => -z.powf(1.0 + g),
            Phi::Custom(f) => f(z),
        }
    }

    /// `φ'(z)`; central differences for custom generators.
    pub fn phi_derivative(&self, z: f64) -> f64 {
        let z = z.max(0.0);
        let g = self.gamma;
        match &self.phi {
            Phi::Power => -(1.0 + g),
            Phi::Sphere => -(1.0 + g) * z.powf(g),
            Phi::Custom(f) => {
                let h = 1e-6 * (1.0 + z);
                let lo = (z - h).max(0.0);
                (f(z + h) - f(lo)) / (z + h - lo)
            }
        }
    }
}

/// Mean vector and covariance of a `d`-dimensional normal model.
#[derive(Debug, Clone)]
pub struct MvnParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl MvnParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        if (&cov - cov.transpose()).amax() > 1e-9 * scale {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        let chol = cov.clone().cholesky().ok_or(Error::ModelSingular)?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() || l.diagonal().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::ModelSingular);
        }
        Ok(Self { mean, cov, chol: l, log_det })
    }

    /// Standard normal `N_d(0, I)`.
    pub fn standard(d: usize) -> Self {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d)).expect("identity is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `ln |Σ|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let centered = DVector::from_column_slice(x) - &self.mean;
        let z = self.chol.solve_lower_triangular(&centered).ok_or(Error::ModelSingular)?;
        Ok(self.log_norm_const() - 0.5 * z.norm_squared())
    }

    /// Log densities of every row of `samples`.
    pub fn log_densities(&self, samples: &SampleSet) -> Result<Vec<f64>> {
        if samples.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: samples.dim() });
        }
        let mut centered = samples.points.transpose();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        let z = self.chol.solve_lower_triangular(&centered).ok_or(Error::ModelSingular)?;
        let c = self.log_norm_const();
        Ok(z.column_iter().map(|col| c - 0.5 * col.norm_squared()).collect())
    }

    fn log_norm_const(&self) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det)
    }

    /// `ln ⟨p_θ^{1+γ}⟩`.
    pub fn log_power_integral(&self, gamma: f64) -> f64 {
        let d = self.dim() as f64;
        -0.5 * gamma * d * LN_2PI - 0.5 * d * (1.0 + gamma).ln() - 0.5 * gamma * self.log_det
    }
}

/// Training points, one row per sample.
#[derive(Debug, Clone)]
pub struct SampleSet {
    points: DMatrix<f64>,
}

impl SampleSet {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidInput("sample set must be non-empty".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sample set contains NaN or Inf".into()));
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("ragged sample rows".into()));
        }
        Self::new(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }
}

/// A score value with the two statistics it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreValue {
    pub value: f64,
    /// `(1/n) Σ p_θ(x_i)^γ`
    pub a: f64,
    /// `⟨p_θ^{1+γ}⟩`
    pub i: f64,
}

/// `(ln A, ln I)` for the given samples and model.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogStats {
    pub log_a: f64,
    pub log_i: f64,
}

impl LogStats {
    pub fn from_log_densities(log_p: &[f64], log_i: f64, gamma: f64) -> Self {
        let floor = DENSITY_FLOOR.ln();
        let terms = log_p.iter().map(|&lp| if lp < floor { f64::NEG_INFINITY } else { gamma * lp });
        let log_a = log_sum_exp(terms) - (log_p.len() as f64).ln();
        Self { log_a, log_i }
    }

    pub fn a(&self) -> f64 {
        self.log_a.exp()
    }

    pub fn i(&self) -> f64 {
        self.log_i.exp()
    }

    pub fn require_positive(self) -> Result<Self> {
        if self.log_a == f64::NEG_INFINITY {
            Err(Error::DegenerateScore)
        } else {
            Ok(self)
        }
    }

    /// `γ c^{1+γ} I − (1+γ) c^γ A`.
    pub fn power(&self, c: f64, gamma: f64) -> f64 {
        let lc = c.ln();
        gamma * ((1.0 + gamma) * lc + self.log_i).exp() - (1.0 + gamma) * (gamma * lc + self.log_a).exp()
    }

    /// `−A / I^{γ/(1+γ)}`.
    pub fn sphere(&self, gamma: f64) -> f64 {
        -(self.log_a - gamma / (1.0 + gamma) * self.log_i).exp()
    }

    /// `φ(A/(cI))·c^{1+γ}·I`.
    pub fn holder(&self, c: f64, cfg: &GammaScoreConfig) -> f64 {
        let g = cfg.gamma();
        let lc = c.ln();
        let z = (self.log_a - self.log_i - lc).exp();
        cfg.phi_value(z) * ((1.0 + g) * lc + self.log_i).exp()
    }

    /// `A / I`.
    pub fn c_raw(&self) -> f64 {
        (self.log_a - self.log_i).exp()
    }
}

pub(crate) fn log_stats(samples: &SampleSet, params: &MvnParams, gamma: f64) -> Result<LogStats> {
    let log_p = params.log_densities(samples)?;
    Ok(LogStats::from_log_densities(&log_p, params.log_power_integral(gamma), gamma))
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("scale c must be positive, got {c}")))
    }
}

/// Normal density `(2π)^{−d/2}|Σ|^{−1/2} exp(−½(x−μ)ᵀΣ⁻¹(x−μ))`.
pub fn mvn_density(params: &MvnParams, x: &[f64]) -> Result<f64> {
    params.log_density(x).map(f64::exp)
}

/// Closed form of `⟨p_θ^{1+γ}⟩ = (2π)^{−γd/2}(1+γ)^{−d/2}|Σ|^{−γ/2}`.
pub fn mvn_power_integral(params: &MvnParams, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    Ok(params.log_power_integral(gamma).exp())
}

/// Closed form of `⟨f g^γ⟩` for two normal densities of the same dimension.
pub fn mvn_cross_power_integral(f: &MvnParams, g: &MvnParams, gamma: f64) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: g.dim() });
    }
    let d = f.dim() as f64;
    // g^γ ∝ N(μ_g, Σ_g/γ), and ∫ N(μ_f, Σ_f) N(μ_g, Σ_g/γ) = N(μ_f; μ_g, Σ_f + Σ_g/γ)
    let merged = MvnParams::new(g.mean().clone(), f.cov() + g.cov() / gamma)?;
    let log_overlap = merged.log_density(f.mean().as_slice())?;
    let log_scale =
        -0.5 * d * gamma * LN_2PI + 0.5 * (1.0 - gamma) * g.log_det() + 0.5 * d * LN_2PI - 0.5 * d * gamma.ln();
    Ok((log_scale + log_overlap).exp())
}

/// Population density-power score `S_power(f, c·g)` between two normal densities.
pub fn power_score_population(f: &MvnParams, g: &MvnParams, c: f64, gamma: f64) -> Result<f64> {
    check_c(c)?;
    let cross = mvn_cross_power_integral(f, g, gamma)?;
    let integral = mvn_power_integral(g, gamma)?;
    Ok(gamma * c.powf(1.0 + gamma) * integral - (1.0 + gamma) * c.powf(gamma) * cross)
}

/// Empirical density-power score of the enlarged model `c·p_θ`.
pub fn power_score(samples: &SampleSet, params: &MvnParams, c: f64, cfg: &GammaScoreConfig) -> Result<ScoreValue> {
    check_c(c)?;
    let st = log_stats(samples, params, cfg.gamma())?;
    Ok(ScoreValue { value: st.power(c, cfg.gamma()), a: st.a(), i: st.i() })
}

/// Empirical pseudo-spherical score `−A / I^{γ/(1+γ)}`; invariant under `p_θ ↦ c·p_θ`.
pub fn sphere_score(samples: &SampleSet, params: &MvnParams, cfg: &GammaScoreConfig) -> Result<f64> {
    let st = log_stats(samples, params, cfg.gamma())?.require_positive()?;
    Ok(st.sphere(cfg.gamma()))
}

/// Empirical Hölder score `φ(A/(cI))·c^{1+γ}·I` of the enlarged model.
pub fn holder_score(samples: &SampleSet, params: &MvnParams, c: f64, cfg: &GammaScoreConfig) -> Result<f64> {
    check_c(c)?;
    let st = log_stats(samples, params, cfg.gamma())?;
    Ok(st.holder(c, cfg))
}

/// Profile scale `c(θ) = A/I` and its clipped version `min{1, c(θ)}`, the
/// minimizer of the enlarged score over `0 < c ≤ 1` for fixed `θ`.
pub fn profile_c(samples: &SampleSet, params: &MvnParams, cfg: &GammaScoreConfig) -> Result<(f64, f64)> {
    let st = log_stats(samples, params, cfg.gamma())?.require_positive()?;
    let raw = st.c_raw();
    Ok((raw, raw.min(1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_d(mu: f64, var: f64) -> MvnParams {
        MvnParams::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, var)).unwrap()
    }

    fn single(x: f64) -> SampleSet {
        SampleSet::from_rows(&[vec![x]]).unwrap()
    }

    #[test]
    fn density_closed_forms() {
        assert_relative_eq!(mvn_density(&one_d(0.0, 1.0), &[0.0]).unwrap(), 0.398_942_280_4, epsilon = 1e-9);
        let p2 = MvnParams::standard(2);
        assert_relative_eq!(mvn_density(&p2, &[0.0, 0.0]).unwrap(), 0.159_154_943_1, epsilon = 1e-9);
        assert!(mvn_density(&p2, &[1e3, 1e3]).unwrap() < 1e-300);
        assert!(matches!(mvn_density(&p2, &[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn singular_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(MvnParams::new(DVector::zeros(2), cov), Err(Error::ModelSingular)));
    }

    #[test]
    fn power_integral_closed_forms() {
        assert_relative_eq!(mvn_power_integral(&one_d(0.0, 1.0), 1.0).unwrap(), 0.282_094_791_8, epsilon = 1e-9);
        assert_relative_eq!(mvn_power_integral(&MvnParams::standard(2), 0.1).unwrap(), 0.756_465_851_8, epsilon = 1e-9);
        assert_relative_eq!(mvn_power_integral(&one_d(3.0, 2.5), 1e-9).unwrap(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn single_sample_values() {
        let cfg = GammaScoreConfig::power(1.0).unwrap();
        let p = one_d(0.0, 1.0);
        let s = single(0.0);
        let ps = power_score(&s, &p, 1.0, &cfg).unwrap();
        assert_relative_eq!(ps.value, -0.515_789_8, epsilon = 1e-7);
        assert_relative_eq!(sphere_score(&s, &p, &cfg).unwrap(), -0.751_125_5, epsilon = 1e-7);
        let (raw, clipped) = profile_c(&s, &p, &cfg).unwrap();
        assert_relative_eq!(raw, 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(clipped, 1.0);
    }

    #[test]
    fn power_score_vanishes_as_c_goes_to_zero() {
        let cfg = GammaScoreConfig::power(0.5).unwrap();
        let v = power_score(&single(0.3), &one_d(0.0, 1.0), 1e-12, &cfg).unwrap().value;
        assert!(v.abs() < 1e-5);
        assert!(power_score(&single(0.3), &one_d(0.0, 1.0), 0.0, &cfg).is_err());
    }

    #[test]
    fn holder_reduces_to_power_and_sphere() {
        let s = SampleSet::from_rows(&[vec![0.1, -0.4], vec![1.2, 0.3], vec![-2.0, 0.5]]).unwrap();
        let cov = DMatrix::from_row_slice(2, 2, &[1.3, 0.2, 0.2, 0.7]);
        let p = MvnParams::new(DVector::from_vec(vec![0.2, -0.1]), cov).unwrap();
        let power = GammaScoreConfig::power(0.3).unwrap();
        let sphere = GammaScoreConfig::sphere(0.3).unwrap();
        let ss = sphere_score(&s, &p, &sphere).unwrap();
        for c in [0.5, 1.0, 2.0] {
            let h = holder_score(&s, &p, c, &power).unwrap();
            let ps = power_score(&s, &p, c, &power).unwrap().value;
            assert_relative_eq!(h, ps, max_relative = 1e-12);
            let hs = holder_score(&s, &p, c, &sphere).unwrap();
            assert_relative_eq!(hs, -(-ss).powf(1.3), max_relative = 1e-12);
        }
    }

    #[test]
    fn custom_phi_validation() {
        let g = 0.5;
        assert!(GammaScoreConfig::custom(g, move |z: f64| -z.powf(1.0 + g) - (z - 1.0).powi(2)).is_err());
        assert!(GammaScoreConfig::custom(g, move |z: f64| -z.powf(1.0 + g) + 0.1).is_err());
        let ok = GammaScoreConfig::custom(g, move |z: f64| -z.powf(1.0 + g) + (z - 1.0).powi(2)).unwrap();
        assert_relative_eq!(ok.phi_value(1.0), -1.0);
        assert!(GammaScoreConfig::power(0.0).is_err());
        assert!(GammaScoreConfig::power(f64::NAN).is_err());
    }

    #[test]
    fn phi_derivatives() {
        let cfg = GammaScoreConfig::sphere(0.4).unwrap();
        let custom = GammaScoreConfig::custom(0.4, |z: f64| -z.powf(1.4)).unwrap();
        for z in [0.2, 1.0, 3.0] {
            assert_relative_eq!(cfg.phi_derivative(z), custom.phi_derivative(z), max_relative = 1e-6);
        }
    }

    #[test]
    fn degenerate_score_when_all_samples_underflow() {
        let cfg = GammaScoreConfig::power(0.1).unwrap();
        let s = single(1e6);
        assert!(matches!(sphere_score(&s, &one_d(0.0, 1.0), &cfg), Err(Error::DegenerateScore)));
        assert!(matches!(profile_c(&s, &one_d(0.0, 1.0), &cfg), Err(Error::DegenerateScore)));
    }

    #[test]
    fn cross_integral_reduces_to_power_integral() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let p = MvnParams::new(DVector::from_vec(vec![1.0, -1.0]), cov).unwrap();
        for g in [0.1, 0.5, 1.0] {
            assert_relative_eq!(
                mvn_cross_power_integral(&p, &p, g).unwrap(),
                mvn_power_integral(&p, g).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn extreme_outliers_do_not_poison_a() {
        let cfg = GammaScoreConfig::power(0.1).unwrap();
        let p = one_d(0.0, 1.0);
        let s = SampleSet::from_rows(&[vec![0.0], vec![1e4]]).unwrap();
        let (raw, _) = profile_c(&s, &p, &cfg).unwrap();
        let (raw_one, _) = profile_c(&single(0.0), &p, &cfg).unwrap();
        assert_relative_eq!(raw, 0.5 * raw_one, max_relative = 1e-12);
    }
}
