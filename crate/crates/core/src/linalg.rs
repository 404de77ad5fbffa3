//! Small dense symmetric helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Smallest eigenvalue of a symmetric matrix.
///
/// Only the lower triangle is trusted; the input is symmetrized first so that
/// round-off asymmetry does not leak into the decomposition.
pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => f64::INFINITY,
        1 => m[(0, 0)],
        _ => {
            let sym = (m + m.transpose()) * 0.5;
            SymmetricEigen::new(sym)
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Solves `m x = b` for symmetric positive definite `m`; `None` if the
/// Cholesky factorization fails.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    m.clone().cholesky().map(|c| c.solve(b))
}

pub fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Gershgorin upper bound on the spectral radius.
pub fn gershgorin_bound(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max)
}
