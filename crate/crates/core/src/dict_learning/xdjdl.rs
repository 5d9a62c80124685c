use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ksvd::{update_dictionary, StageReport};
use super::{build_q_matrix, init_dictionary, objective_terms, HyperParams, IterationRecord, LcXdjdlModel, XdjdlModel};
use crate::error::{Error, Result};
use crate::linalg::{ridge_solve, vstack_scaled};
use crate::sparse_coding::{joint_sparse_code, omp_batch, Dictionary, JointSparsityBounds, SparseCode};

/// Where in the training loop an observer is being called from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainPhase {
    /// Initial OMP codes, before the first iteration.
    Init,
    /// After joint sparse coding and block trimming.
    SparseCoding,
    /// After the ECG dictionary update.
    StageE,
    /// After the joint PPG dictionary / mapping update.
    StageP,
}

/// Snapshot handed to training observers.
#[derive(Debug, Clone, Copy)]
pub struct TrainEvent<'a> {
    /// 0 for initialisation, then 1-based iteration number.
    pub iteration: usize,
    pub phase: TrainPhase,
    pub a_e: &'a SparseCode,
    pub a_p: &'a SparseCode,
    pub stage: Option<StageReport>,
}

/// Builds the stacked data and dictionary of the joint problem:
///
/// ```text
/// [ X_e         ]   [ D_e          0          ]
/// [ sqrt(a) X_p ] - [ 0            sqrt(a) D_p] [A_e]
/// [ 0           ]   [ -sqrt(b) I   sqrt(b) W  ] [A_p]
/// [ sqrt(g) Q   ]   [ 0            sqrt(g) H  ]
/// ```
///
/// The last block row is present only when `label = Some((H, Q, gamma))`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_joint_system(
    d_e: &DMatrix<f64>,
    d_p: &DMatrix<f64>,
    w: &DMatrix<f64>,
    x_e: &DMatrix<f64>,
    x_p: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
    label: Option<(&DMatrix<f64>, &DMatrix<f64>, f64)>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d, k_e, k_p, n) = (d_e.nrows(), d_e.ncols(), d_p.ncols(), x_e.ncols());
    let r = label.map_or(0, |(h, _, _)| h.nrows());
    let rows = 2 * d + k_e + r;
    let (sa, sb) = (alpha.sqrt(), beta.sqrt());

    let mut dict = DMatrix::zeros(rows, k_e + k_p);
    dict.view_mut((0, 0), (d, k_e)).copy_from(d_e);
    dict.view_mut((d, k_e), (d, k_p)).copy_from(&(d_p * sa));
    for i in 0..k_e {
        dict[(2 * d + i, i)] = -sb;
    }
    dict.view_mut((2 * d, k_e), (k_e, k_p)).copy_from(&(w * sb));

    let mut data = DMatrix::zeros(rows, n);
    data.view_mut((0, 0), (d, n)).copy_from(x_e);
    data.view_mut((d, 0), (d, n)).copy_from(&(x_p * sa));

    if let Some((h, q, gamma)) = label {
        let sg = gamma.sqrt();
        dict.view_mut((2 * d + k_e, k_e), (r, k_p)).copy_from(&(h * sg));
        data.view_mut((2 * d + k_e, 0), (r, n)).copy_from(&(q * sg));
    }
    (dict, data)
}

/// Subproblem (i): K-SVD sweep over the ECG dictionary.
pub fn update_subproblem_e(x_e: &DMatrix<f64>, d_e: &mut DMatrix<f64>, a_e: &mut SparseCode) -> Result<StageReport> {
    update_dictionary(x_e, d_e, a_e)
}

/// Runs one K-SVD sweep on the vertically stacked blocks `sqrt(w_i) * data_i`
/// against `sqrt(w_i) * dict_i`, then unstacks the dictionary blocks.
fn stacked_update(blocks: &mut [(f64, &DMatrix<f64>, &mut DMatrix<f64>)], codes: &mut SparseCode) -> Result<StageReport> {
    for (weight, _, _) in blocks.iter() {
        if !(*weight > 0.0) {
            return Err(Error::InvalidParams(format!("stacked update weights must be positive, got {weight}")));
        }
    }
    let data = {
        let parts: Vec<(f64, &DMatrix<f64>)> = blocks.iter().map(|(wt, x, _)| (wt.sqrt(), *x)).collect();
        vstack_scaled(&parts)
    };
    let mut dict = {
        let parts: Vec<(f64, &DMatrix<f64>)> = blocks.iter().map(|(wt, _, d)| (wt.sqrt(), &**d)).collect();
        vstack_scaled(&parts)
    };
    let report = update_dictionary(&data, &mut dict, codes)?;
    let mut r0 = 0;
    for (weight, _, target) in blocks.iter_mut() {
        let rows = target.nrows();
        target.copy_from(&(dict.rows(r0, rows) / weight.sqrt()));
        r0 += rows;
    }
    Ok(report)
}

/// Subproblem (ii): treats `[sqrt(alpha) D_p; sqrt(beta) W]` as one dictionary
/// for data `[sqrt(alpha) X_p; sqrt(beta) A_e*]` and updates it together with
/// the non-zeros of `A_p`.
#[allow(clippy::too_many_arguments)]
pub fn update_subproblem_p(
    x_p: &DMatrix<f64>,
    a_e_star: &SparseCode,
    d_p: &mut DMatrix<f64>,
    w: &mut DMatrix<f64>,
    a_p: &mut SparseCode,
    alpha: f64,
    beta: f64,
) -> Result<StageReport> {
    let a_e = a_e_star.to_dense();
    stacked_update(&mut [(alpha, x_p, d_p), (beta, &a_e, w)], a_p)
}

/// Subproblem (ii) with the extra label block `[sqrt(gamma) H]` against
/// `[sqrt(gamma) Q]`.
#[allow(clippy::too_many_arguments)]
pub fn update_subproblem_p_lc(
    x_p: &DMatrix<f64>,
    a_e_star: &SparseCode,
    q: &DMatrix<f64>,
    d_p: &mut DMatrix<f64>,
    w: &mut DMatrix<f64>,
    h: &mut DMatrix<f64>,
    a_p: &mut SparseCode,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<StageReport> {
    let a_e = a_e_star.to_dense();
    stacked_update(&mut [(alpha, x_p, d_p), (beta, &a_e, w), (gamma, q, h)], a_p)
}

type Observer<'o> = dyn FnMut(TrainEvent<'_>) + 'o;

fn train_core(
    x_e: &DMatrix<f64>,
    x_p: &DMatrix<f64>,
    hyper: &HyperParams,
    q: Option<&DMatrix<f64>>,
    observer: &mut Observer<'_>,
) -> Result<(XdjdlModel, Option<DMatrix<f64>>)> {
    hyper.validate()?;
    if x_e.shape() != x_p.shape() {
        return Err(Error::dims(format!("X_e is {:?}, X_p is {:?}", x_e.shape(), x_p.shape())));
    }
    let n = x_e.ncols();
    let k_max = hyper.k_e.max(hyper.k_p);
    if n < k_max {
        return Err(Error::TooFewSamples { n, k: k_max });
    }
    if !(hyper.alpha > 0.0 && hyper.beta > 0.0) {
        return Err(Error::InvalidParams("training needs alpha > 0 and beta > 0".into()));
    }
    let gamma = hyper.gamma;
    if q.is_some() && !(gamma > 0.0) {
        return Err(Error::InvalidParams("label-consistent training needs gamma > 0".into()));
    }
    let bounds = JointSparsityBounds::new(hyper.k_e, hyper.t_e, hyper.k_p, hyper.t_p)?;

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let dict_e = init_dictionary(x_e, hyper.k_e, &mut rng)?;
    let dict_p = init_dictionary(x_p, hyper.k_p, &mut rng)?;
    let mut a_e = omp_batch(&dict_e, x_e, hyper.t_e)?;
    let mut a_p = omp_batch(&dict_p, x_p, hyper.t_p)?;
    let gram = a_p.gram();
    let mut w = ridge_solve(&a_p.cross(&a_e.to_dense()), &gram, hyper.ridge_lambda)?;
    let mut h = match q {
        Some(q) => Some(ridge_solve(&a_p.cross(q), &gram, hyper.ridge_lambda)?),
        None => None,
    };
    let mut d_e = dict_e.into_inner();
    let mut d_p = dict_p.into_inner();

    let eval = |d_e: &DMatrix<f64>,
                d_p: &DMatrix<f64>,
                w: &DMatrix<f64>,
                h: Option<&DMatrix<f64>>,
                a_e: &SparseCode,
                a_p: &SparseCode| {
        let label = h.zip(q);
        objective_terms(d_e, d_p, w, x_e, x_p, a_e, a_p, label).map(|t| t.total(hyper.alpha, hyper.beta, gamma))
    };

    let initial = eval(&d_e, &d_p, &w, h.as_ref(), &a_e, &a_p)?;
    if !initial.is_finite() {
        return Err(Error::NonFiniteObjective(0));
    }
    let mut trace = vec![initial];
    let mut iterations = Vec::new();
    observer(TrainEvent { iteration: 0, phase: TrainPhase::Init, a_e: &a_e, a_p: &a_p, stage: None });

    for iter in 1..=hyper.max_iters {
        let label = match (&h, q) {
            (Some(h), Some(q)) => Some((h, q, gamma)),
            _ => None,
        };
        let (joint_dict, joint_data) = assemble_joint_system(&d_e, &d_p, &w, x_e, x_p, hyper.alpha, hyper.beta, label);
        let joint = joint_sparse_code(&joint_dict, &joint_data, &bounds)?;
        (a_e, a_p) = joint.split_rows(hyper.k_e, hyper.t_e, hyper.t_p)?;
        let (max_nnz_e, max_nnz_p) = (a_e.max_nnz(), a_p.max_nnz());
        observer(TrainEvent { iteration: iter, phase: TrainPhase::SparseCoding, a_e: &a_e, a_p: &a_p, stage: None });

        let stage_e = update_subproblem_e(x_e, &mut d_e, &mut a_e)?;
        observer(TrainEvent { iteration: iter, phase: TrainPhase::StageE, a_e: &a_e, a_p: &a_p, stage: Some(stage_e) });

        let stage_p = match (&mut h, q) {
            (Some(h), Some(q)) => {
                update_subproblem_p_lc(x_p, &a_e, q, &mut d_p, &mut w, h, &mut a_p, hyper.alpha, hyper.beta, gamma)?
            }
            _ => update_subproblem_p(x_p, &a_e, &mut d_p, &mut w, &mut a_p, hyper.alpha, hyper.beta)?,
        };
        observer(TrainEvent { iteration: iter, phase: TrainPhase::StageP, a_e: &a_e, a_p: &a_p, stage: Some(stage_p) });

        let obj = eval(&d_e, &d_p, &w, h.as_ref(), &a_e, &a_p)?;
        if !obj.is_finite() {
            return Err(Error::NonFiniteObjective(iter));
        }
        let prev = *trace.last().expect("trace starts with the initial objective");
        trace.push(obj);
        iterations.push(IterationRecord { objective: obj, stage_e, stage_p, max_nnz_e, max_nnz_p });
        if (prev - obj).abs() / prev.max(f64::MIN_POSITIVE) < hyper.rel_tol {
            break;
        }
    }

    let model = XdjdlModel { d_e: Dictionary::from_unnormalized(d_e)?, d_p, w, hyper: hyper.clone(), trace, iterations };
    Ok((model, h))
}

/// Trains an XDJDL model on paired ECG/PPG cycles (columns of `x_e`, `x_p`).
pub fn train_xdjdl(x_e: &DMatrix<f64>, x_p: &DMatrix<f64>, hyper: &HyperParams) -> Result<XdjdlModel> {
    train_xdjdl_observed(x_e, x_p, hyper, &mut |_| {})
}

/// As [`train_xdjdl`], calling `observer` after every phase of every iteration.
pub fn train_xdjdl_observed(
    x_e: &DMatrix<f64>,
    x_p: &DMatrix<f64>,
    hyper: &HyperParams,
    observer: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<XdjdlModel> {
    train_core(x_e, x_p, hyper, None, observer).map(|(m, _)| m)
}

/// Trains the label-consistent variant; `labels[j]` is the class of column `j`.
pub fn train_lc_xdjdl(
    x_e: &DMatrix<f64>,
    x_p: &DMatrix<f64>,
    labels: &[usize],
    class_count: usize,
    hyper: &HyperParams,
) -> Result<LcXdjdlModel> {
    train_lc_xdjdl_observed(x_e, x_p, labels, class_count, hyper, &mut |_| {})
}

pub fn train_lc_xdjdl_observed(
    x_e: &DMatrix<f64>,
    x_p: &DMatrix<f64>,
    labels: &[usize],
    class_count: usize,
    hyper: &HyperParams,
    observer: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<LcXdjdlModel> {
    if labels.len() != x_p.ncols() {
        return Err(Error::dims(format!("{} labels for {} columns", labels.len(), x_p.ncols())));
    }
    let q = build_q_matrix(labels, class_count, hyper.ones_per_class)?;
    let (base, h) = train_core(x_e, x_p, hyper, Some(&q.q), observer)?;
    Ok(LcXdjdlModel { base, h: h.expect("label term present"), class_count, ones_per_class: hyper.ones_per_class })
}
