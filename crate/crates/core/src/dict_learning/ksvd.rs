//! K-SVD atom updates.
//!
//! Each atom is refit to the rank-1 approximation of the residual restricted
//! to the training columns that currently use it; the zero pattern of the
//! code matrix never changes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::frobenius_sq;
use crate::sparse_coding::SparseCode;

/// What happened to a single atom during an update sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomOutcome {
    /// Atom and its coefficient row were refit.
    Updated,
    /// Atom had no users and was replaced by training column `column`.
    Replaced { column: usize },
    /// Nothing changed (no users and nothing worth replacing, or the refit
    /// would not reduce the restricted error).
    Unchanged,
}

/// Stage objective `||X - D A||_F^2` before and after a full sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub before: f64,
    pub after: f64,
    pub replaced: usize,
}

/// Residual `||X - D A||_F^2`.
pub fn reconstruction_error(x: &DMatrix<f64>, dict: &DMatrix<f64>, codes: &SparseCode) -> f64 {
    frobenius_sq(&(x - codes.left_mul(dict)))
}

struct Sweep {
    /// `users[k]` lists `(column, position within that column's entries)`.
    users: Vec<Vec<(usize, usize)>>,
    /// Squared reconstruction error per training column.
    errors: Vec<f64>,
    used_for_replacement: Vec<bool>,
}

impl Sweep {
    fn new(x: &DMatrix<f64>, dict: &DMatrix<f64>, codes: &SparseCode) -> Self {
        let mut users = vec![Vec::new(); dict.ncols()];
        for (j, col) in codes.columns().iter().enumerate() {
            for (pos, &(i, v)) in col.iter().enumerate() {
                if v != 0.0 {
                    users[i].push((j, pos));
                }
            }
        }
        let recon = codes.left_mul(dict);
        let errors = (0..x.ncols()).map(|j| (x.column(j) - recon.column(j)).norm_squared()).collect();
        Sweep { users, errors, used_for_replacement: vec![false; x.ncols()] }
    }
}

fn check_shapes(x: &DMatrix<f64>, dict: &DMatrix<f64>, codes: &SparseCode) -> Result<()> {
    if x.nrows() != dict.nrows() || codes.rows() != dict.ncols() || codes.ncols() != x.ncols() {
        return Err(Error::dims(format!(
            "K-SVD: X {}x{}, D {}x{}, A {}x{}",
            x.nrows(),
            x.ncols(),
            dict.nrows(),
            dict.ncols(),
            codes.rows(),
            codes.ncols()
        )));
    }
    Ok(())
}

fn update_atom(x: &DMatrix<f64>, dict: &mut DMatrix<f64>, codes: &mut SparseCode, k: usize, sweep: &mut Sweep) -> AtomOutcome {
    let users = &sweep.users[k];
    if users.is_empty() {
        // replace with the worst-reconstructed column not already used
        let mut worst: Option<(usize, f64)> = None;
        for (j, &e) in sweep.errors.iter().enumerate() {
            if sweep.used_for_replacement[j] {
                continue;
            }
            if worst.is_none_or(|(_, we)| e > we) {
                worst = Some((j, e));
            }
        }
        let Some((j, e)) = worst else {
            return AtomOutcome::Unchanged;
        };
        let norm = x.column(j).norm();
        if !(e > 0.0) || !(norm > 0.0) {
            return AtomOutcome::Unchanged;
        }
        dict.set_column(k, &(x.column(j) / norm));
        sweep.used_for_replacement[j] = true;
        return AtomOutcome::Replaced { column: j };
    }

    let m = x.nrows();
    let u = users.len();
    let mut restricted = DMatrix::zeros(m, u);
    let mut old_row = DVector::zeros(u);
    for (c, &(j, pos)) in users.iter().enumerate() {
        let mut r = x.column(j).into_owned();
        for (p, &(i, v)) in codes.column(j).iter().enumerate() {
            if p != pos {
                r.axpy(-v, &dict.column(i), 1.0);
            }
        }
        old_row[c] = codes.column(j)[pos].1;
        restricted.set_column(c, &r);
    }
    let old_err = frobenius_sq(&(&restricted - dict.column(k) * old_row.transpose()));

    let Some(svd) = restricted.clone().try_svd(true, true, f64::EPSILON, 0) else {
        return AtomOutcome::Unchanged;
    };
    let (Some(uu), Some(vt)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
        return AtomOutcome::Unchanged;
    };
    let top = svd.singular_values.iamax();
    let sigma = svd.singular_values[top];
    let mut atom = uu.column(top).into_owned();
    let mut row = vt.row(top).transpose() * sigma;
    // sign convention: largest-magnitude atom entry positive
    if atom[atom.iamax()] < 0.0 {
        atom = -atom;
        row = -row;
    }
    let new_err = frobenius_sq(&(&restricted - &atom * row.transpose()));
    if !(new_err <= old_err) {
        return AtomOutcome::Unchanged;
    }

    dict.set_column(k, &atom);
    let users = sweep.users[k].clone();
    let cols = codes.columns_mut();
    for (c, &(j, pos)) in users.iter().enumerate() {
        cols[j][pos].1 = row[c];
        sweep.errors[j] = (restricted.column(c) - &atom * row[c]).norm_squared();
    }
    AtomOutcome::Updated
}

/// Updates atom `k` of `dict` and row `k` of `codes` against data `x`.
///
/// Unused atoms are replaced by the normalised training column with the
/// largest reconstruction error; their (all-zero) coefficients are untouched.
pub fn ksvd_atom_update(x: &DMatrix<f64>, dict: &mut DMatrix<f64>, codes: &mut SparseCode, k: usize) -> Result<AtomOutcome> {
    check_shapes(x, dict, codes)?;
    if k >= dict.ncols() {
        return Err(Error::dims(format!("atom index {k} out of {} atoms", dict.ncols())));
    }
    let mut sweep = Sweep::new(x, dict, codes);
    Ok(update_atom(x, dict, codes, k, &mut sweep))
}

/// Updates every atom once, in ascending index order.
pub fn update_dictionary(x: &DMatrix<f64>, dict: &mut DMatrix<f64>, codes: &mut SparseCode) -> Result<StageReport> {
    check_shapes(x, dict, codes)?;
    let before = reconstruction_error(x, dict, codes);
    let mut sweep = Sweep::new(x, dict, codes);
    let mut replaced = 0;
    for k in 0..dict.ncols() {
        if let AtomOutcome::Replaced { .. } = update_atom(x, dict, codes, k, &mut sweep) {
            replaced += 1;
        }
    }
    let after = reconstruction_error(x, dict, codes);
    Ok(StageReport { before, after, replaced })
}
