//! Options and results shared by the density and regression fitters.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the largest parameter change, measured in
    /// units of the current model scale.
    pub tol: f64,
    pub n_starts: usize,
    pub seed: u64,
    /// Random elemental subsets screened for regression starting points.
    pub n_subsets: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-8, n_starts: 5, seed: 0, n_subsets: 200 }
    }
}

impl FitOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.n_starts == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!(
                "need max_iter >= 1, n_starts >= 1, tol > 0 (got {}, {}, {})",
                self.max_iter, self.n_starts, self.tol
            )));
        }
        Ok(())
    }
}

/// Which side of the two-stage procedure produced the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Profile scale of the pseudo-spherical fit was at most one.
    Interior,
    /// Profile scale exceeded one; `c` pinned to one and `θ` refitted.
    Boundary,
}

/// Per-fit iteration record.
#[derive(Debug, Clone, Default)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub final_score: f64,
    /// Driving score after every accepted step of the winning start, starting
    /// with the initial value.
    pub score_trace: Vec<f64>,
    /// Index of the winning start.
    pub best_start: usize,
}

/// Result of fitting an enlarged model `c·p_θ` with `0 < c ≤ 1`.
#[derive(Debug, Clone)]
pub struct EnlargedFit<P> {
    pub c_hat: f64,
    /// Unclipped profile scale at the pseudo-spherical solution.
    pub c_raw: f64,
    pub theta_hat: P,
    pub branch: Branch,
    pub iterations: usize,
    pub converged: bool,
    /// Hölder score of `(ĉ, θ̂)` under the fitting configuration.
    pub final_score: f64,
}

impl<P> EnlargedFit<P> {
    /// Estimated contamination ratio `1 − ĉ`.
    pub fn contamination(&self) -> f64 {
        1.0 - self.c_hat
    }
}

/// Number of samples flagged as outliers: `⌊n(1−ĉ) + 0.5⌋`.
pub(crate) fn outlier_count(n: usize, c_hat: f64) -> usize {
    let k = (n as f64 * (1.0 - c_hat) + 0.5).floor();
    (k.max(0.0) as usize).min(n)
}

/// Indices of the `k` smallest log densities, ties broken by lower index.
pub(crate) fn lowest_k(log_density: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..log_density.len()).collect();
    idx.sort_by(|&a, &b| log_density[a].total_cmp(&log_density[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outlier_count_rounds_to_nearest() {
        assert_eq!(outlier_count(50, 1.0), 0);
        assert_eq!(outlier_count(50, 0.8), 10);
        assert_eq!(outlier_count(50, 0.82), 9);
        assert_eq!(outlier_count(50, 0.78), 11);
    }

    #[test]
    fn lowest_k_breaks_ties_by_index() {
        let v = [0.0, -1.0, -1.0, 2.0, -1.0];
        assert_eq!(lowest_k(&v, 2), vec![1, 2]);
        assert_eq!(lowest_k(&v, 0), Vec::<usize>::new());
    }

    #[test]
    fn options_validation() {
        assert!(FitOptions::default().validate().is_ok());
        assert!(FitOptions { n_starts: 0, ..Default::default() }.validate().is_err());
        assert!(FitOptions { tol: 0.0, ..Default::default() }.validate().is_err());
    }
}
