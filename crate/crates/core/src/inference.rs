//! Test-time reconstruction of ECG cycles from PPG cycles, the DCT-domain
//! linear baseline, and R-peak offset compensation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dict_learning::{build_q_matrix, DiscriminativeMatrix, LcXdjdlModel, XdjdlModel};
use crate::error::{Error, Result};
use crate::linalg::{ridge_solve, vstack_scaled};
use crate::sparse_coding::{omp_batch_unnormalized, SparseCode};

/// Default ridge weight of the DCT baseline.
pub const DEFAULT_DCT_RIDGE: f64 = 1e-3;

/// Reconstructed ECG cycles together with the PPG codes they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionBatch {
    /// `d x m` reconstructed ECG cycles.
    pub r_e: DMatrix<f64>,
    /// `k_p x m` PPG codes.
    pub source_codes: SparseCode,
}

fn synthesize(model: &XdjdlModel, codes: SparseCode) -> ReconstructionBatch {
    // D_e (W A_p): map codes first, then synthesise
    let s_e = codes.left_mul(&model.w);
    ReconstructionBatch { r_e: model.d_e.atoms() * s_e, source_codes: codes }
}

fn check_rows(t_p: &DMatrix<f64>, d: usize) -> Result<()> {
    if t_p.nrows() != d {
        return Err(Error::dims(format!("test cycles have {} rows, model expects {d}", t_p.nrows())));
    }
    Ok(())
}

/// Codes each column of `t_p` under `D_p` with `t_p` atoms, maps the code
/// through `W` and synthesises with `D_e`.
pub fn infer_ecg(model: &XdjdlModel, t_p: &DMatrix<f64>) -> Result<ReconstructionBatch> {
    check_rows(t_p, model.d_p.nrows())?;
    let codes = omp_batch_unnormalized(&model.d_p, t_p, model.hyper.t_p)?;
    Ok(synthesize(model, codes))
}

/// Label-aware inference: codes `[T_p; sqrt(gamma) Q]` under
/// `[D_p; sqrt(gamma) H]`, then maps and synthesises as [`infer_ecg`].
pub fn infer_ecg_lc(model: &LcXdjdlModel, t_p: &DMatrix<f64>, q_test: &DiscriminativeMatrix) -> Result<ReconstructionBatch> {
    let base = &model.base;
    check_rows(t_p, base.d_p.nrows())?;
    if q_test.q.ncols() != t_p.ncols() {
        return Err(Error::dims(format!("Q has {} columns, T_p has {}", q_test.q.ncols(), t_p.ncols())));
    }
    if q_test.q.nrows() != model.h.nrows() {
        return Err(Error::dims(format!("Q has {} rows, H has {}", q_test.q.nrows(), model.h.nrows())));
    }
    let g = base.hyper.gamma.sqrt();
    let dict = vstack_scaled(&[(1.0, &base.d_p), (g, &model.h)]);
    let target = vstack_scaled(&[(1.0, t_p), (g, &q_test.q)]);
    let codes = omp_batch_unnormalized(&dict, &target, base.hyper.t_p)?;
    Ok(synthesize(base, codes))
}

/// [`infer_ecg_lc`] with `Q` built from per-column class labels.
pub fn infer_ecg_lc_labels(model: &LcXdjdlModel, t_p: &DMatrix<f64>, labels: &[usize]) -> Result<ReconstructionBatch> {
    let q = build_q_matrix(labels, model.class_count, model.ones_per_class)?;
    infer_ecg_lc(model, t_p, &q)
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// Rotates `x` circularly so that sample `i` moves to `(i + shift) mod d`.
pub fn rotate(x: &[f64], shift: isize) -> Vec<f64> {
    let d = x.len();
    if d == 0 {
        return vec![];
    }
    let s = shift.rem_euclid(d as isize) as usize;
    let mut out = vec![0.0; d];
    for (i, v) in x.iter().enumerate() {
        out[(i + s) % d] = *v;
    }
    out
}

/// Circularly shifts `rec_ecg` so its maximum lands on the maximum of
/// `ref_ecg`. Both cycles must have the same length.
pub fn align_r_peak_offset(ref_ecg: &[f64], rec_ecg: &[f64]) -> Result<Vec<f64>> {
    if ref_ecg.len() != rec_ecg.len() {
        return Err(Error::dims(format!("reference has {} samples, reconstruction {}", ref_ecg.len(), rec_ecg.len())));
    }
    if ref_ecg.is_empty() {
        return Ok(vec![]);
    }
    let shift = argmax(ref_ecg) as isize - argmax(rec_ecg) as isize;
    Ok(rotate(rec_ecg, shift))
}

/// Column-wise [`align_r_peak_offset`].
pub fn align_r_peak_offset_batch(reference: &DMatrix<f64>, rec: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if reference.shape() != rec.shape() {
        return Err(Error::dims(format!("reference {:?}, reconstruction {:?}", reference.shape(), rec.shape())));
    }
    let mut out = rec.clone();
    for j in 0..rec.ncols() {
        let shifted = align_r_peak_offset(reference.column(j).as_slice(), rec.column(j).as_slice())?;
        out.column_mut(j).copy_from_slice(&shifted);
    }
    Ok(out)
}

/// Orthonormal DCT-II matrix: `C[k, n] = s_k cos(pi (n + 1/2) k / d)` with
/// `s_0 = sqrt(1/d)` and `s_k = sqrt(2/d)` otherwise. Its inverse is `C^T`.
pub fn dct_matrix(d: usize) -> DMatrix<f64> {
    let df = d as f64;
    DMatrix::from_fn(d, d, |k, n| {
        let s = if k == 0 { (1.0 / df).sqrt() } else { (2.0 / df).sqrt() };
        s * (std::f64::consts::PI * (n as f64 + 0.5) * k as f64 / df).cos()
    })
}

/// Linear map between PPG and ECG DCT coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DctBaselineModel {
    /// `d x d`.
    pub w_dct: DMatrix<f64>,
    pub ridge: f64,
}

/// Fits `W_dct = C_e C_p^T (C_p C_p^T + ridge I)^{-1}` on DCT coefficients of
/// the training columns.
pub fn train_dct_baseline(x_e: &DMatrix<f64>, x_p: &DMatrix<f64>, ridge: f64) -> Result<DctBaselineModel> {
    if x_e.shape() != x_p.shape() {
        return Err(Error::dims(format!("X_e is {:?}, X_p is {:?}", x_e.shape(), x_p.shape())));
    }
    if x_e.ncols() == 0 {
        return Err(Error::EmptyDataset);
    }
    let c = dct_matrix(x_e.nrows());
    let c_e = &c * x_e;
    let c_p = &c * x_p;
    let w_dct = ridge_solve(&(&c_e * c_p.transpose()), &(&c_p * c_p.transpose()), ridge)?;
    if w_dct.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(DctBaselineModel { w_dct, ridge })
}

/// Maps test PPG cycles through the DCT domain: `C^T W_dct C T_p`.
pub fn infer_dct_baseline(model: &DctBaselineModel, t_p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = model.w_dct.nrows();
    check_rows(t_p, d)?;
    let c = dct_matrix(d);
    Ok(c.transpose() * (&model.w_dct * (&c * t_p)))
}
