//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

/// Relative eigenvalue floor: eigenvalues below `FLOOR * max_eigenvalue`
/// mark a covariance as numerically singular.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Log-determinant of a symmetric positive semidefinite matrix via its
/// eigendecomposition. `None` when the matrix is singular under
/// [`EIGEN_FLOOR`] or contains non-finite entries.
pub fn sym_log_det(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.max();
    if !(max > 0.0) {
        return None;
    }
    let floor = EIGEN_FLOOR * max;
    if eig.iter().any(|&l| l < floor) {
        return None;
    }
    Some(eig.iter().map(|l| l.ln()).sum())
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Sum of log diagonal entries; the log-determinant of `diag(m)`.
pub fn diag_log_det(m: &DMatrix<f64>) -> Option<f64> {
    let diag = m.diagonal();
    let max = diag.max();
    if !(max > 0.0) || diag.iter().any(|v| !v.is_finite() || *v < EIGEN_FLOOR * max) {
        return None;
    }
    Some(diag.iter().map(|v| v.ln()).sum())
}
