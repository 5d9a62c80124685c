//! Greedy L0-constrained sparse coding.
//!
//! [`omp`] is plain orthogonal matching pursuit over a unit-norm
//! [`Dictionary`]. [`joint_sparse_code`] codes against a stacked two-block
//! dictionary with a global budget `t_e + t_p` and then trims each block back
//! to its own budget by zeroing the smallest coefficients (no refit).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Residual norm below which pursuit stops early.
pub const RESIDUAL_TOL: f64 = 1e-12;
/// Correlations within this distance of the maximum are treated as ties and
/// resolved towards the lower atom index.
pub const TIE_TOL: f64 = 1e-12;

/// A sparse vector as `(row, value)` pairs sorted by row.
pub type SparseVector = Vec<(usize, f64)>;

/// Column-normalised atom matrix (`m x k`, atoms are columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Wraps an atom matrix whose columns must already have unit L2 norm.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(Error::InvalidParams("dictionary needs at least one atom".into()));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("dictionary has non-finite entries".into()));
        }
        for (j, col) in atoms.column_iter().enumerate() {
            if (col.norm() - 1.0).abs() >= 1e-9 {
                return Err(Error::InvalidParams(format!("atom {j} is not unit norm")));
            }
        }
        Ok(Dictionary { atoms })
    }

    /// Normalises every column; zero columns are rejected.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            let n = col.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::InvalidParams(format!("atom {j} has zero or non-finite norm")));
            }
            col /= n;
        }
        Dictionary::new(atoms)
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.atoms
    }

    /// Signal dimension `m`.
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms `k`.
    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }
}

/// Column-sparse coefficient matrix (`rows x n`) with a per-column bound.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    rows: usize,
    bound: usize,
    columns: Vec<SparseVector>,
}

impl SparseCode {
    pub fn new(rows: usize, bound: usize, columns: Vec<SparseVector>) -> Result<Self> {
        for (j, col) in columns.iter().enumerate() {
            if col.len() > bound {
                return Err(Error::InvalidParams(format!("column {j} has {} entries, bound is {bound}", col.len())));
            }
            if col.iter().any(|&(i, _)| i >= rows) {
                return Err(Error::dims(format!("column {j} indexes past {rows} rows")));
            }
            if col.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::InvalidParams(format!("column {j} rows not strictly increasing")));
            }
        }
        Ok(SparseCode { rows, bound, columns })
    }

    pub fn empty(rows: usize, bound: usize) -> Self {
        SparseCode { rows, bound, columns: Vec::new() }
    }

    /// Builds from a dense matrix, keeping exact non-zeros.
    pub fn from_dense(m: &DMatrix<f64>, bound: usize) -> Result<Self> {
        let columns =
            m.column_iter().map(|c| c.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect()).collect();
        SparseCode::new(m.nrows(), bound, columns)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[SparseVector] {
        &self.columns
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [SparseVector] {
        &mut self.columns
    }

    /// Number of non-zero values in column `j`.
    pub fn nnz(&self, j: usize) -> usize {
        self.columns[j].iter().filter(|(_, v)| *v != 0.0).count()
    }

    pub fn max_nnz(&self) -> usize {
        (0..self.ncols()).map(|j| self.nnz(j)).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.ncols());
        for (j, col) in self.columns.iter().enumerate() {
            for &(i, v) in col {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Computes `M * A` for a dense left factor `M` with `rows` columns.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.ncols(), self.rows, "left_mul: inner dimensions differ");
        let mut out = DMatrix::zeros(m.nrows(), self.ncols());
        for (j, col) in self.columns.iter().enumerate() {
            let mut dst = out.column_mut(j);
            for &(i, v) in col {
                dst.axpy(v, &m.column(i), 1.0);
            }
        }
        out
    }

    /// `A A^T` as a dense `rows x rows` matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.rows, self.rows);
        for col in &self.columns {
            for &(i, vi) in col {
                for &(k, vk) in col {
                    g[(i, k)] += vi * vk;
                }
            }
        }
        g
    }

    /// `T A^T` for a dense `T` with one column per code column.
    pub fn cross(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(t.ncols(), self.ncols(), "cross: column counts differ");
        let mut out = DMatrix::zeros(t.nrows(), self.rows);
        for (j, col) in self.columns.iter().enumerate() {
            let tj = t.column(j);
            for &(i, v) in col {
                out.column_mut(i).axpy(v, &tj, 1.0);
            }
        }
        out
    }

    /// Splits rows `[0, at)` and `[at, rows)` into two codes with new bounds.
    pub fn split_rows(&self, at: usize, upper_bound: usize, lower_bound: usize) -> Result<(SparseCode, SparseCode)> {
        let mut upper = Vec::with_capacity(self.ncols());
        let mut lower = Vec::with_capacity(self.ncols());
        for col in &self.columns {
            upper.push(col.iter().filter(|(i, _)| *i < at).copied().collect());
            lower.push(col.iter().filter(|(i, _)| *i >= at).map(|&(i, v)| (i - at, v)).collect());
        }
        Ok((SparseCode::new(at, upper_bound, upper)?, SparseCode::new(self.rows - at, lower_bound, lower)?))
    }

    /// Inverse of [`SparseCode::split_rows`].
    pub fn stack_rows(upper: &SparseCode, lower: &SparseCode) -> Result<SparseCode> {
        if upper.ncols() != lower.ncols() {
            return Err(Error::dims("stack_rows: column counts differ"));
        }
        let columns = upper
            .columns
            .iter()
            .zip(&lower.columns)
            .map(|(u, l)| u.iter().copied().chain(l.iter().map(|&(i, v)| (i + upper.rows, v))).collect())
            .collect();
        SparseCode::new(upper.rows + lower.rows, upper.bound + lower.bound, columns)
    }
}

/// Block layout and budgets for coding against a stacked dictionary whose
/// first `k_e` atoms form the upper block and last `k_p` the lower block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointSparsityBounds {
    pub k_e: usize,
    pub t_e: usize,
    pub k_p: usize,
    pub t_p: usize,
}

impl JointSparsityBounds {
    pub fn new(k_e: usize, t_e: usize, k_p: usize, t_p: usize) -> Result<Self> {
        if t_e == 0 || t_p == 0 || k_e == 0 || k_p == 0 {
            return Err(Error::InvalidParams("joint sparsity bounds must be positive".into()));
        }
        if t_e > k_e {
            return Err(Error::SparsityExceedsAtoms { t: t_e, k: k_e });
        }
        if t_p > k_p {
            return Err(Error::SparsityExceedsAtoms { t: t_p, k: k_p });
        }
        Ok(JointSparsityBounds { k_e, t_e, k_p, t_p })
    }
}

/// Full record of one pursuit run.
#[derive(Debug, Clone)]
pub struct OmpTrace {
    pub code: SparseVector,
    /// Atoms in the order they were selected.
    pub selected: Vec<usize>,
    /// `residual_norms[0] = ||x||`, then one entry per selected atom.
    pub residual_norms: Vec<f64>,
}

fn check_args(m: usize, k: usize, x_len: usize, t: usize) -> Result<()> {
    if x_len != m {
        return Err(Error::dims(format!("signal has length {x_len}, dictionary rows {m}")));
    }
    if t > k {
        return Err(Error::SparsityExceedsAtoms { t, k });
    }
    Ok(())
}

/// Pursuit core. `weights[j]` rescales the correlation of atom `j`
/// (`1/||d_j||`, or 0 to exclude the atom).
fn pursue(mat: &DMatrix<f64>, weights: &[f64], x: &[f64], t: usize) -> OmpTrace {
    let xv = DVector::from_column_slice(x);
    let mut residual = xv.clone();
    let mut rnorm = residual.norm();
    let mut residual_norms = vec![rnorm];
    let mut selected: Vec<usize> = Vec::with_capacity(t);
    let mut coeffs = DVector::zeros(0);
    let mut taken = vec![false; mat.ncols()];

    while selected.len() < t && rnorm >= RESIDUAL_TOL {
        let corr = mat.tr_mul(&residual);
        let score = |j: usize| if taken[j] { 0.0 } else { corr[j].abs() * weights[j] };
        let best = (0..mat.ncols()).map(score).fold(0.0, f64::max);
        if !(best > 1e-14 * rnorm) {
            break;
        }
        let pick = (0..mat.ncols()).find(|&j| !taken[j] && weights[j] > 0.0 && score(j) >= best - TIE_TOL);
        let Some(pick) = pick else { break };

        let mut support = selected.clone();
        support.push(pick);
        let sub = mat.select_columns(support.iter());
        let gram = sub.tr_mul(&sub);
        let Some(chol) = gram.clone().cholesky() else { break };
        let l = chol.l_dirty();
        let s = support.len();
        let lmax = (0..s).map(|i| l[(i, i)].abs()).fold(0.0, f64::max);
        if l[(s - 1, s - 1)].abs() <= 1e-7 * lmax {
            // atom is numerically inside the current span
            break;
        }
        let c = chol.solve(&sub.tr_mul(&xv));
        residual = &xv - &sub * &c;
        rnorm = residual.norm();
        taken[pick] = true;
        selected.push(pick);
        coeffs = c;
        residual_norms.push(rnorm);
    }

    let mut code: SparseVector = selected.iter().zip(coeffs.iter()).filter(|(_, v)| **v != 0.0).map(|(&i, &v)| (i, v)).collect();
    code.sort_by_key(|&(i, _)| i);
    OmpTrace { code, selected, residual_norms }
}

fn inverse_norms(mat: &DMatrix<f64>) -> Vec<f64> {
    mat.column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 && n.is_finite() {
                1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

/// Orthogonal matching pursuit of `x` over `dict` with at most `t` atoms.
pub fn omp(dict: &Dictionary, x: &DVector<f64>, t: usize) -> Result<SparseVector> {
    omp_traced(dict, x, t).map(|tr| tr.code)
}

/// As [`omp`], also returning the selection order and residual history.
pub fn omp_traced(dict: &Dictionary, x: &DVector<f64>, t: usize) -> Result<OmpTrace> {
    let d = dict.atoms();
    check_args(d.nrows(), d.ncols(), x.len(), t)?;
    let weights = vec![1.0; d.ncols()];
    Ok(pursue(d, &weights, x.as_slice(), t))
}

/// OMP over a matrix whose columns need not be unit norm. Atom selection uses
/// normalised correlations; coefficients refer to the unnormalised columns.
/// Zero columns are never selected.
pub fn omp_unnormalized(mat: &DMatrix<f64>, x: &DVector<f64>, t: usize) -> Result<SparseVector> {
    check_args(mat.nrows(), mat.ncols(), x.len(), t)?;
    Ok(pursue(mat, &inverse_norms(mat), x.as_slice(), t).code)
}

fn batch(mat: &DMatrix<f64>, weights: &[f64], xs: &DMatrix<f64>, t: usize) -> Vec<SparseVector> {
    (0..xs.ncols()).into_par_iter().map(|j| pursue(mat, weights, xs.column(j).as_slice(), t).code).collect()
}

/// Column-wise [`omp`]; columns are coded independently (in parallel).
pub fn omp_batch(dict: &Dictionary, xs: &DMatrix<f64>, t: usize) -> Result<SparseCode> {
    let d = dict.atoms();
    check_args(d.nrows(), d.ncols(), xs.nrows(), t)?;
    let weights = vec![1.0; d.ncols()];
    SparseCode::new(d.ncols(), t, batch(d, &weights, xs, t))
}

/// Column-wise [`omp_unnormalized`].
pub fn omp_batch_unnormalized(mat: &DMatrix<f64>, xs: &DMatrix<f64>, t: usize) -> Result<SparseCode> {
    check_args(mat.nrows(), mat.ncols(), xs.nrows(), t)?;
    SparseCode::new(mat.ncols(), t, batch(mat, &inverse_norms(mat), xs, t))
}

fn trim_block(entries: &mut Vec<(usize, f64)>, keep: usize) {
    if entries.len() <= keep {
        return;
    }
    // largest magnitude first; equal magnitudes keep the lower index
    entries.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    entries.truncate(keep);
}

/// Zeroes the smallest-magnitude entries of each block of `code` until the
/// upper block (`rows < k_e`) has at most `t_e` and the lower block at most
/// `t_p` non-zeros. Remaining coefficients are left as they are.
pub fn enforce_block_sparsity(code: &mut SparseVector, bounds: &JointSparsityBounds) {
    let (mut upper, mut lower): (Vec<_>, Vec<_>) =
        code.iter().copied().filter(|(_, v)| *v != 0.0).partition(|(i, _)| *i < bounds.k_e);
    trim_block(&mut upper, bounds.t_e);
    trim_block(&mut lower, bounds.t_p);
    upper.extend(lower);
    upper.sort_by_key(|&(i, _)| i);
    *code = upper;
}

/// Codes every column of `x_joint` against the stacked dictionary `d_joint`
/// (first `k_e` columns upper block, last `k_p` lower) with a global budget of
/// `t_e + t_p` atoms, then enforces the per-block budgets.
///
/// Columns of `d_joint` need not be unit norm; selection uses normalised
/// correlations.
pub fn joint_sparse_code(d_joint: &DMatrix<f64>, x_joint: &DMatrix<f64>, bounds: &JointSparsityBounds) -> Result<SparseCode> {
    if d_joint.ncols() != bounds.k_e + bounds.k_p {
        return Err(Error::dims(format!(
            "joint dictionary has {} atoms, expected k_e + k_p = {}",
            d_joint.ncols(),
            bounds.k_e + bounds.k_p
        )));
    }
    let t = bounds.t_e + bounds.t_p;
    check_args(d_joint.nrows(), d_joint.ncols(), x_joint.nrows(), t)?;
    let mut cols = batch(d_joint, &inverse_norms(d_joint), x_joint, t);
    for c in &mut cols {
        enforce_block_sparsity(c, bounds);
    }
    SparseCode::new(d_joint.ncols(), t, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthonormal(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        m.qr().q()
    }

    #[test]
    fn identity_single_atom() {
        let d = Dictionary::new(DMatrix::identity(4, 4)).unwrap();
        let x = DVector::from_vec(vec![0.0, 2.0, 0.0, 0.0]);
        let tr = omp_traced(&d, &x, 1).unwrap();
        assert_eq!(tr.code, vec![(1, 2.0)]);
        assert_eq!(*tr.residual_norms.last().unwrap(), 0.0);
    }

    #[test]
    fn scaled_atom_is_recovered() {
        let q = random_orthonormal(6, 3);
        let d = Dictionary::new(q.clone()).unwrap();
        let x = q.column(2) * 3.0;
        let code = omp(&d, &x, 1).unwrap();
        assert_eq!(code.len(), 1);
        assert_eq!(code[0].0, 2);
        assert!((code[0].1 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_atom_combination_matches_exhaustive_search() {
        let q = random_orthonormal(8, 11);
        let d = Dictionary::new(q.clone()).unwrap();
        let x = q.column(1) * 1.5 - q.column(5) * 0.7;
        let code = omp(&d, &x, 2).unwrap();
        assert_eq!(code.iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 5]);
        assert!((code[0].1 - 1.5).abs() < 1e-9);
        assert!((code[1].1 + 0.7).abs() < 1e-9);

        // exhaustive least squares over all 28 two-atom supports
        let mut zero_residual = Vec::new();
        for a in 0..8 {
            for b in (a + 1)..8 {
                let sub = q.select_columns([a, b].iter());
                let c = (sub.transpose() * &sub).lu().solve(&(sub.transpose() * &x)).unwrap();
                if (&x - &sub * c).norm() < 1e-9 {
                    zero_residual.push((a, b));
                }
            }
        }
        assert_eq!(zero_residual, vec![(1, 5)]);
    }

    #[test]
    fn zero_signal_gives_empty_code() {
        let d = Dictionary::new(DMatrix::identity(5, 5)).unwrap();
        assert!(omp(&d, &DVector::zeros(5), 3).unwrap().is_empty());
    }

    #[test]
    fn argument_errors() {
        let d = Dictionary::new(DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(omp(&d, &DVector::zeros(4), 1), Err(Error::DimensionMismatch(_))));
        assert!(matches!(omp(&d, &DVector::zeros(3), 4), Err(Error::SparsityExceedsAtoms { .. })));
    }

    #[test]
    fn ties_go_to_lower_index() {
        let d = Dictionary::new(DMatrix::identity(3, 3)).unwrap();
        let x = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        assert_eq!(omp(&d, &x, 1).unwrap(), vec![(1, 1.0)]);
    }

    #[test]
    fn batch_matches_loop_and_handles_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw = DMatrix::from_fn(10, 16, |_, _| rng.random::<f64>() - 0.5);
        let d = Dictionary::from_unnormalized(raw).unwrap();
        let xs = DMatrix::from_fn(10, 7, |_, _| rng.random::<f64>() - 0.5);
        let b = omp_batch(&d, &xs, 3).unwrap();
        for j in 0..xs.ncols() {
            assert_eq!(b.column(j), omp(&d, &xs.column(j).into_owned(), 3).unwrap().as_slice());
        }
        let empty = omp_batch(&d, &DMatrix::zeros(10, 0), 3).unwrap();
        assert_eq!(empty.ncols(), 0);
    }

    #[test]
    fn batch_recovers_scaled_atoms() {
        let q = random_orthonormal(5, 2);
        let d = Dictionary::new(q.clone()).unwrap();
        let mut xs = DMatrix::zeros(5, 5);
        for j in 0..5 {
            xs.set_column(j, &(q.column(4 - j) * (j as f64 + 1.0)));
        }
        let code = omp_batch(&d, &xs, 1).unwrap();
        for j in 0..5 {
            assert_eq!(code.column(j).len(), 1);
            assert_eq!(code.column(j)[0].0, 4 - j);
        }
    }

    #[test]
    fn block_trim_drops_smallest_upper_entry() {
        let bounds = JointSparsityBounds::new(4, 2, 4, 2).unwrap();
        let mut code = vec![(0, 3.0), (1, -2.0), (2, 0.5), (5, 1.0)];
        enforce_block_sparsity(&mut code, &bounds);
        assert_eq!(code, vec![(0, 3.0), (1, -2.0), (5, 1.0)]);
    }

    #[test]
    fn block_trim_leaves_compliant_code_alone() {
        let bounds = JointSparsityBounds::new(3, 2, 3, 2).unwrap();
        let mut code = vec![(0, 1.0), (4, 2.0), (5, -1.0)];
        let before = code.clone();
        enforce_block_sparsity(&mut code, &bounds);
        assert_eq!(code, before);
    }

    #[test]
    fn block_trim_equal_magnitudes_drop_higher_index() {
        let bounds = JointSparsityBounds::new(3, 1, 1, 1).unwrap();
        let mut code = vec![(0, 1.0), (2, -1.0)];
        enforce_block_sparsity(&mut code, &bounds);
        assert_eq!(code, vec![(0, 1.0)]);
    }

    #[test]
    fn joint_planted_exact_recovery() {
        // orthonormal stacked dictionary split 5 + 5, signal uses 2 + 2 atoms
        let q = random_orthonormal(10, 21);
        let bounds = JointSparsityBounds::new(5, 2, 5, 2).unwrap();
        let x = q.column(0) * 2.0 - q.column(3) * 1.0 + q.column(6) * 0.5 + q.column(9) * 1.25;
        let xs = DMatrix::from_columns(&[x]);
        let code = joint_sparse_code(&q, &xs, &bounds).unwrap();
        let col = code.column(0);
        assert_eq!(col.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0, 3, 6, 9]);
        let expected = [2.0, -1.0, 0.5, 1.25];
        for (e, want) in col.iter().zip(expected) {
            assert!((e.1 - want).abs() < 1e-9);
        }
    }

    #[test]
    fn sparse_code_products_match_dense() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, -1.0, 0.0]);
        let code = SparseCode::from_dense(&a, 2).unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(code.left_mul(&m), &m * &a);
        assert_eq!(code.gram(), &a * a.transpose());
        let t = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert_eq!(code.cross(&t), &t * a.transpose());
        let (u, l) = code.split_rows(1, 1, 2).unwrap();
        assert_eq!(SparseCode::stack_rows(&u, &l).unwrap().to_dense(), a);
    }
}
