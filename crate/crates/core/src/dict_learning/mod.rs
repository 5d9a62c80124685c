//! Dictionary learning: K-SVD updates and the XDJDL / LC-XDJDL training loops.

mod ksvd;
mod xdjdl;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, ridge_solve};
use crate::sparse_coding::{Dictionary, SparseCode};

pub use ksvd::{ksvd_atom_update, reconstruction_error, update_dictionary, AtomOutcome, StageReport};
pub use xdjdl::{
    assemble_joint_system, train_lc_xdjdl, train_lc_xdjdl_observed, train_xdjdl, train_xdjdl_observed, update_subproblem_e,
    update_subproblem_p, update_subproblem_p_lc, TrainEvent, TrainPhase,
};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// ECG dictionary size.
    pub k_e: usize,
    /// PPG dictionary size.
    pub k_p: usize,
    /// Sparsity bound on ECG codes.
    pub t_e: usize,
    /// Sparsity bound on PPG codes.
    pub t_p: usize,
    /// Weight of the PPG fidelity term.
    pub alpha: f64,
    /// Weight of the code-mapping term.
    pub beta: f64,
    /// Weight of the label-consistency term (LC variant only).
    pub gamma: f64,
    /// Ridge weight for initialising `W` (and `H`).
    pub ridge_lambda: f64,
    pub max_iters: usize,
    /// Stop when the relative objective change drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    /// Ones per class in the discriminative code (LC variant only).
    pub ones_per_class: usize,
}

impl Default for HyperParams {
    /// Full-scale settings for 300-sample cycles.
    fn default() -> Self {
        HyperParams {
            k_e: 320,
            k_p: 9000,
            t_e: 10,
            t_p: 10,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            ridge_lambda: 1e-3,
            max_iters: 30,
            rel_tol: 1e-4,
            seed: 0,
            ones_per_class: 1,
        }
    }
}

impl HyperParams {
    /// Small settings (`k_e = k_p = 24`, `t = 3`) used with 32-sample cycles.
    pub fn desk() -> Self {
        HyperParams { k_e: 24, k_p: 24, t_e: 3, t_p: 3, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.k_e == 0 || self.k_p == 0 || self.t_e == 0 || self.t_p == 0 {
            return bad("k_e, k_p, t_e, t_p must be positive".into());
        }
        if self.t_e > self.k_e {
            return Err(Error::SparsityExceedsAtoms { t: self.t_e, k: self.k_e });
        }
        if self.t_p > self.k_p {
            return Err(Error::SparsityExceedsAtoms { t: self.t_p, k: self.k_p });
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.ridge_lambda >= 0.0) || !self.ridge_lambda.is_finite() {
            return bad(format!("ridge_lambda must be >= 0, got {}", self.ridge_lambda));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if !(self.rel_tol >= 0.0) {
            return bad(format!("rel_tol must be >= 0, got {}", self.rel_tol));
        }
        if self.ones_per_class == 0 {
            return bad("ones_per_class must be positive".into());
        }
        Ok(())
    }
}

/// Per-iteration diagnostics recorded during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Full objective after the iteration.
    pub objective: f64,
    /// Subproblem (i): `||X_e - D_e A_e||^2`.
    pub stage_e: StageReport,
    /// Subproblem (ii): the stacked PPG/mapping(/label) objective.
    pub stage_p: StageReport,
    pub max_nnz_e: usize,
    pub max_nnz_p: usize,
}

/// A trained cross-domain model.
///
/// `d_p` is stored as a plain matrix: the PPG update normalises the stacked
/// column `[sqrt(alpha) d_p; sqrt(beta) w]`, so `d_p` columns alone are
/// generally not unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct XdjdlModel {
    pub d_e: Dictionary,
    pub d_p: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub hyper: HyperParams,
    /// Objective after initialisation followed by one value per iteration.
    pub trace: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
}

impl XdjdlModel {
    pub fn dim(&self) -> usize {
        self.d_e.dim()
    }
}

/// XDJDL model plus the label-consistency map `H` (`r x k_p`).
#[derive(Debug, Clone, PartialEq)]
pub struct LcXdjdlModel {
    pub base: XdjdlModel,
    pub h: DMatrix<f64>,
    pub class_count: usize,
    pub ones_per_class: usize,
}

impl LcXdjdlModel {
    /// Discriminative code length `r = class_count * ones_per_class`.
    pub fn code_len(&self) -> usize {
        self.class_count * self.ones_per_class
    }
}

/// Binary class-code matrix `Q` (`r x n`), one contiguous block of ones per
/// class.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminativeMatrix {
    pub q: DMatrix<f64>,
    pub class_count: usize,
    pub ones_per_class: usize,
}

/// Builds `Q` from per-column labels: column `j` has ones in rows
/// `[label_j * ones_per_class, (label_j + 1) * ones_per_class)`.
pub fn build_q_matrix(labels: &[usize], class_count: usize, ones_per_class: usize) -> Result<DiscriminativeMatrix> {
    if class_count == 0 || ones_per_class == 0 {
        return Err(Error::InvalidParams("class_count and ones_per_class must be positive".into()));
    }
    let r = class_count * ones_per_class;
    let mut q = DMatrix::zeros(r, labels.len());
    for (j, &label) in labels.iter().enumerate() {
        if label >= class_count {
            return Err(Error::LabelOutOfRange { label, classes: class_count });
        }
        for i in label * ones_per_class..(label + 1) * ones_per_class {
            q[(i, j)] = 1.0;
        }
    }
    Ok(DiscriminativeMatrix { q, class_count, ones_per_class })
}

/// Picks `k` distinct columns of `x` uniformly at random and normalises them.
pub fn init_dictionary<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, rng: &mut R) -> Result<Dictionary> {
    if x.ncols() < k {
        return Err(Error::TooFewSamples { n: x.ncols(), k });
    }
    let idx = rand::seq::index::sample(rng, x.ncols(), k);
    Dictionary::from_unnormalized(x.select_columns(idx.iter().collect::<Vec<_>>().iter()))
}

/// Closed-form ridge map `W = A_e A_p^T (A_p A_p^T + lambda I)^{-1}`.
pub fn ridge_init_w(a_e: &DMatrix<f64>, a_p: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if a_e.ncols() != a_p.ncols() {
        return Err(Error::dims("ridge_init_w: A_e and A_p column counts differ"));
    }
    ridge_solve(&(a_e * a_p.transpose()), &(a_p * a_p.transpose()), lambda)
}

/// Individual terms of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// `||X_e - D_e A_e||^2`
    pub ecg: f64,
    /// `||X_p - D_p A_p||^2` (unweighted)
    pub ppg: f64,
    /// `||A_e - W A_p||^2` (unweighted)
    pub mapping: f64,
    /// `||Q - H A_p||^2` (unweighted), zero without labels
    pub label: f64,
}

impl ObjectiveTerms {
    pub fn total(&self, alpha: f64, beta: f64, gamma: f64) -> f64 {
        self.ecg + alpha * self.ppg + beta * self.mapping + gamma * self.label
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn objective_terms(
    d_e: &DMatrix<f64>,
    d_p: &DMatrix<f64>,
    w: &DMatrix<f64>,
    x_e: &DMatrix<f64>,
    x_p: &DMatrix<f64>,
    a_e: &SparseCode,
    a_p: &SparseCode,
    label: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<ObjectiveTerms> {
    let n = x_e.ncols();
    if x_p.ncols() != n || a_e.ncols() != n || a_p.ncols() != n {
        return Err(Error::dims("objective: column counts differ"));
    }
    if d_e.nrows() != x_e.nrows() || d_p.nrows() != x_p.nrows() || a_e.rows() != d_e.ncols() || a_p.rows() != d_p.ncols() {
        return Err(Error::dims("objective: dictionary/code shapes inconsistent"));
    }
    if w.nrows() != a_e.rows() || w.ncols() != a_p.rows() {
        return Err(Error::dims("objective: W shape inconsistent"));
    }
    let ecg = frobenius_sq(&(x_e - a_e.left_mul(d_e)));
    let ppg = frobenius_sq(&(x_p - a_p.left_mul(d_p)));
    let mapping = frobenius_sq(&(a_e.to_dense() - a_p.left_mul(w)));
    let label = match label {
        Some((h, q)) => {
            if h.ncols() != a_p.rows() || q.ncols() != n || q.nrows() != h.nrows() {
                return Err(Error::dims("objective: H/Q shape inconsistent"));
            }
            frobenius_sq(&(q - a_p.left_mul(h)))
        }
        None => 0.0,
    };
    Ok(ObjectiveTerms { ecg, ppg, mapping, label })
}

/// `||X_e - D_e A_e||^2 + alpha ||X_p - D_p A_p||^2 + beta ||A_e - W A_p||^2`.
pub fn objective(model: &XdjdlModel, x_e: &DMatrix<f64>, x_p: &DMatrix<f64>, a_e: &SparseCode, a_p: &SparseCode) -> Result<f64> {
    let t = objective_terms(model.d_e.atoms(), &model.d_p, &model.w, x_e, x_p, a_e, a_p, None)?;
    Ok(t.total(model.hyper.alpha, model.hyper.beta, 0.0))
}

/// As [`objective`] plus `gamma ||Q - H A_p||^2`.
pub fn objective_lc(
    model: &LcXdjdlModel,
    x_e: &DMatrix<f64>,
    x_p: &DMatrix<f64>,
    a_e: &SparseCode,
    a_p: &SparseCode,
    q: &DMatrix<f64>,
) -> Result<f64> {
    let b = &model.base;
    let t = objective_terms(b.d_e.atoms(), &b.d_p, &b.w, x_e, x_p, a_e, a_p, Some((&model.h, q)))?;
    Ok(t.total(b.hyper.alpha, b.hyper.beta, b.hyper.gamma))
}
