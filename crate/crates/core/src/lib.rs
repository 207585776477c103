//! Joint estimation of model parameters and the outlier contamination ratio.
//!
//! A statistical model `p_θ` is enlarged to the scaled family `c·p_θ` and
//! fitted with a density-power (or more generally Hölder-type) scoring rule.
//! The fitted scale `ĉ` estimates the fraction of samples generated by the
//! target density, so `1 − ĉ` estimates the contamination ratio and the
//! `n(1 − ĉ)` samples with the lowest fitted density are flagged as outliers.
//!
//! Two model families are provided:
//!
//! * [`density`]: multivariate normal density estimation,
//! * [`regression`]: linear regression with a Gaussian location-scale noise
//!   model, which also handles contamination whose ratio depends on `x`.
//!
//! [`baselines`] holds the reference regression estimators (L2, L1, Huber,
//! LTS, Geman-McClure) and [`harness`] reproduces the synthetic benchmark
//! protocols.

// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod density;
mod error;
pub mod fit;
pub mod harness;
pub(crate) mod linalg;
pub mod regression;
pub mod score;
pub mod stats;

pub use baselines::{fit_baseline, rmse, BaselineKind};
pub use density::{detect_outliers, fit_enlarged, fit_power_mvn, fit_sphere_mvn};
pub use error::{Error, Result};
pub use fit::{Branch, EnlargedFit, FitDiagnostics, FitOptions};
pub use regression::{
    c_reg, cond_power_score, cond_sphere_score, detect_outliers_reg, fit_enlarged_reg, fit_power_reg, fit_sphere_reg,
    CondScoreStats, RegData, RegParams,
};
pub use score::{
    holder_score, mvn_density, mvn_power_integral, power_score, profile_c, sphere_score, GammaScoreConfig, MvnParams,
    Phi, SampleSet, ScoreValue,
};
