//! Small dense linear-algebra helpers over nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value tolerance for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > max * RANK_TOL * m.nrows().max(m.ncols()) as f64).count()
}

/// Inverse of a symmetric positive-definite matrix, falling back to LU.
pub fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.inverse());
    }
    m.clone().try_inverse()
}

/// Solves `m x = b` for symmetric positive-definite `m`, falling back to LU.
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(b));
    }
    m.clone().lu().solve(b)
}

/// Symmetrizes in place to remove rounding asymmetry.
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

/// Sub-matrix on the given row/column indices.
pub fn select(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}
