//! Small dense linear-algebra helpers shared across modules.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Squared Frobenius norm.
pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub fn column_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.norm()).collect()
}

/// Returns `m` with every non-zero column scaled to unit L2 norm.
pub fn normalize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    out
}

/// Vertically stacks blocks with equal column counts, scaling each block.
pub fn vstack_scaled(blocks: &[(f64, &DMatrix<f64>)]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |(_, b)| b.ncols());
    let rows: usize = blocks.iter().map(|(_, b)| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for (scale, b) in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.view_mut((r0, 0), (b.nrows(), cols)).copy_from(&(*b * *scale));
        r0 += b.nrows();
    }
    out
}

/// Solves the ridge problem `min_W ||T - W A||_F^2 + lambda ||W||_F^2` given
/// the cross term `T A^T` and Gram matrix `A A^T`:
/// `W = (T A^T) (A A^T + lambda I)^{-1}`.
///
/// With `lambda == 0` a numerically rank-deficient Gram matrix is reported as
/// [`Error::SingularSystem`].
pub fn ridge_solve(cross: &DMatrix<f64>, gram: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let k = gram.nrows();
    if gram.ncols() != k || cross.ncols() != k {
        return Err(Error::dims(format!(
            "ridge: gram {}x{}, cross {}x{}",
            gram.nrows(),
            gram.ncols(),
            cross.nrows(),
            cross.ncols()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParams(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let mut system = gram.clone();
    for i in 0..k {
        system[(i, i)] += lambda;
    }
    let chol = system.cholesky().ok_or(Error::SingularSystem)?;
    if lambda == 0.0 {
        let l = chol.l_dirty();
        let diag: Vec<f64> = (0..k).map(|i| l[(i, i)] * l[(i, i)]).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if k > 0 && !(min > 1e-12 * max) {
            return Err(Error::SingularSystem);
        }
    }
    let solved = chol.solve(&cross.transpose());
    Ok(solved.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vstack_scales_blocks() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 3.0]);
        let s = vstack_scaled(&[(2.0, &a), (-1.0, &b)]);
        assert_eq!(s, DMatrix::from_row_slice(3, 2, &[2.0, 4.0, -1.0, -1.0, 0.0, -3.0]));
    }

    #[test]
    fn ridge_rejects_singular_gram_without_regularisation() {
        let gram = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let cross = DMatrix::identity(2, 2);
        assert!(matches!(ridge_solve(&cross, &gram, 0.0), Err(Error::SingularSystem)));
        assert!(ridge_solve(&cross, &gram, 0.1).is_ok());
    }
}
