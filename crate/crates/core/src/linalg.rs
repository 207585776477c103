use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold on |R_jj| below which a design is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Solves `min_b Σ w_i (y_i − z_iᵀ b)²` through a QR factorization of the
/// row-scaled design. Rows with zero weight drop out.
pub(crate) fn weighted_least_squares(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&[f64]>,
) -> Result<DVector<f64>> {
    let (n, p) = design.shape();
    let mut a = design.clone();
    let mut b = y.clone();
    if let Some(w) = weights {
        for i in 0..n {
            let s = w[i].max(0.0).sqrt();
            a.row_mut(i).scale_mut(s);
            b[i] *= s;
        }
    }
    if n < p {
        return Err(Error::DesignSingular);
    }
    let qr = a.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if !(max_diag > 0.0) || (0..p).any(|j| r[(j, j)].abs() <= RANK_TOL * max_diag) {
        return Err(Error::DesignSingular);
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb).ok_or(Error::DesignSingular)
}

/// Symmetrizes `cov` and floors its eigenvalues at `1e-10·trace/d`.
/// Fails when the trace is not above `min_trace`.
pub(crate) fn floor_covariance(cov: &DMatrix<f64>, min_trace: f64) -> Result<DMatrix<f64>> {
    let d = cov.nrows();
    let sym = (cov + cov.transpose()) * 0.5;
    let trace = sym.trace();
    if !trace.is_finite() || trace <= min_trace {
        return Err(Error::ModelSingular);
    }
    let floor = 1e-10 * trace / d as f64;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Design matrix `[x | 1]` with the intercept column last.
pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut z = DMatrix::from_element(n, d + 1, 1.0);
    z.view_mut((0, 0), (n, d)).copy_from(x);
    z
}
