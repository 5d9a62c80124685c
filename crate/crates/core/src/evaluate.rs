//! Morphology and timing metrics for reconstructed ECG cycles.
//!
//! Cycles are compared in a common frame: both the reference and the
//! reconstruction are rotated circularly by the same amount so that the
//! reference R peak sits at 40% of the cycle. Rotation leaves the
//! whole-cycle metrics unchanged and places the P wave and Q point (which an
//! R-to-R cycle carries at its tail) before R, where the fiducial windows
//! expect them.

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{align_r_peak_offset, rotate};

/// Position of the reference R peak in the evaluation frame, as a fraction of
/// the cycle length.
pub const R_POSITION: f64 = 0.4;
/// Share of an R-R span assigned to the wave following R; the rest belongs to
/// the next beat's P wave.
pub const BORDER_SPLIT: f64 = 0.6;

const Q_WINDOW_S: f64 = 0.08;
const S_WINDOW_S: f64 = 0.08;
const T_GAP_S: f64 = 0.04;
const T_WINDOW_S: f64 = 0.4;

fn sample_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::dims(format!("pearson: {} vs {} samples", x.len(), x_hat.len())));
    }
    if !(sample_std(x) > 1e-12) {
        return Err(Error::DegenerateInput("reference has zero variance"));
    }
    if !(sample_std(x_hat) > 1e-12) {
        return Err(Error::DegenerateInput("estimate has zero variance"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = x_hat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(x_hat) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Relative RMSE `||x - x_hat|| / ||x||`.
pub fn rrmse(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::dims(format!("rrmse: {} vs {} samples", x.len(), x_hat.len())));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return Err(Error::DegenerateInput("reference has zero norm"));
    }
    let err = x.iter().zip(x_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(err / norm)
}

/// P, Q, R, S and T sample indices within a cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fiducials {
    pub p: Option<usize>,
    pub q: Option<usize>,
    pub r: Option<usize>,
    pub s: Option<usize>,
    pub t: Option<usize>,
}

impl Fiducials {
    /// All five points present and strictly ordered.
    pub fn is_complete(&self) -> bool {
        match (self.p, self.q, self.r, self.s, self.t) {
            (Some(p), Some(q), Some(r), Some(s), Some(t)) => p < q && q < r && r < s && s < t,
            _ => false,
        }
    }
}

/// Index of the extremum of `x` over the open interval `(lo, hi)`, or `None`
/// if the interval is empty or the extremum sits on its edge (the signal is
/// still rising or falling past the window, so it is not a wave peak).
fn interior_extremum(x: &[f64], lo: isize, hi: isize, want_max: bool) -> Option<usize> {
    let first = (lo + 1).max(0) as usize;
    let last = hi.min(x.len() as isize) - 1;
    if last < first as isize {
        return None;
    }
    let last = last as usize;
    let mut best = first;
    for i in first..=last {
        let better = if want_max { x[i] > x[best] } else { x[i] < x[best] };
        if better {
            best = i;
        }
    }
    (best != first && best != last).then_some(best)
}

fn ms(fs: f64, seconds: f64) -> isize {
    (seconds * fs).round() as isize
}

/// Locates P, Q, R, S and T on one ECG cycle sampled at `fs_effective` Hz.
///
/// R is the global maximum. Q and S are the minima within 80 ms before and
/// after R, P the maximum between the cycle start and Q, and T the maximum
/// from 40 ms to 400 ms after S. A point is absent when its window is empty
/// or its extremum lies on the window edge.
pub fn detect_fiducials(cycle: &[f64], fs_effective: f64) -> Fiducials {
    let mut f = Fiducials::default();
    if cycle.is_empty() {
        return f;
    }
    let mut r = 0;
    for (i, v) in cycle.iter().enumerate() {
        if *v > cycle[r] {
            r = i;
        }
    }
    f.r = Some(r);
    let ri = r as isize;
    f.q = interior_extremum(cycle, ri - ms(fs_effective, Q_WINDOW_S), ri, false);
    f.s = interior_extremum(cycle, ri, ri + ms(fs_effective, S_WINDOW_S), false);
    if let Some(q) = f.q {
        f.p = interior_extremum(cycle, 0, q as isize, true);
    }
    if let Some(s) = f.s {
        let s = s as isize;
        f.t = interior_extremum(cycle, s + ms(fs_effective, T_GAP_S), s + ms(fs_effective, T_WINDOW_S), true);
    }
    f
}

/// How far a beat's subwaves extend: the R-R spans before and after it, in
/// samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BorderRule {
    pub prev_rr: usize,
    pub next_rr: usize,
}

impl BorderRule {
    /// A single cycle of length `d` seen in the evaluation frame: both
    /// neighbouring spans are the cycle itself.
    pub fn single_cycle(d: usize) -> Self {
        BorderRule { prev_rr: d, next_rr: d }
    }
}

/// P wave, QRS complex and T wave index ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subwaves {
    pub p: Range<usize>,
    pub qrs: Range<usize>,
    pub t: Range<usize>,
}

/// Splits a beat into `P = [left, Q)`, `QRS = [Q, S]`, `T = (S, right]`.
///
/// The left border lies `(1 - 0.6)` of the previous R-R span before R and the
/// right border `0.6` of the next span after R, clamped to the cycle.
pub fn split_subwaves(len: usize, fid: &Fiducials, rule: BorderRule) -> Result<Subwaves> {
    let q = fid.q.ok_or(Error::MissingFiducials("q"))?;
    let r = fid.r.ok_or(Error::MissingFiducials("r"))?;
    let s = fid.s.ok_or(Error::MissingFiducials("s"))?;
    if !(q < r && r < s && s < len) {
        return Err(Error::InvalidParams(format!("fiducials q={q}, r={r}, s={s} not ordered within {len}")));
    }
    let left = r.saturating_sub(((1.0 - BORDER_SPLIT) * rule.prev_rr as f64).round() as usize).min(q);
    let right = (r + (BORDER_SPLIT * rule.next_rr as f64).round() as usize).min(len - 1).max(s);
    Ok(Subwaves { p: left..q, qrs: q..s + 1, t: s + 1..right + 1 })
}

/// PR, QRS and QT durations in seconds; `None` where a needed point is
/// missing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Intervals {
    pub pr: Option<f64>,
    pub qrs: Option<f64>,
    pub qt: Option<f64>,
}

impl Intervals {
    pub fn is_complete(&self) -> bool {
        self.pr.is_some() && self.qrs.is_some() && self.qt.is_some()
    }
}

/// `PR = (r - p)/fs`, `QRS = (s - q)/fs`, `QT = (t - q)/fs`.
pub fn intervals(fid: &Fiducials, fs_effective: f64) -> Intervals {
    let span = |a: Option<usize>, b: Option<usize>| match (a, b) {
        (Some(a), Some(b)) if b >= a => Some((b - a) as f64 / fs_effective),
        _ => None,
    };
    Intervals { pr: span(fid.p, fid.r), qrs: span(fid.q, fid.s), qt: span(fid.q, fid.t) }
}

/// Mean absolute interval errors in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMae {
    pub pr: f64,
    pub qrs: f64,
    pub qt: f64,
    /// Cycle pairs used.
    pub used: usize,
    /// Cycle pairs excluded because an interval was missing on either side.
    pub excluded: usize,
}

/// Mean absolute error per interval type over cycle pairs where both sides
/// have all three intervals.
pub fn interval_mae(recovered: &[Intervals], reference: &[Intervals]) -> Result<IntervalMae> {
    if recovered.len() != reference.len() {
        return Err(Error::dims(format!("{} recovered vs {} reference cycles", recovered.len(), reference.len())));
    }
    let (mut pr, mut qrs, mut qt, mut used) = (0.0, 0.0, 0.0, 0usize);
    for (a, b) in recovered.iter().zip(reference) {
        if let (Some(a_pr), Some(a_qrs), Some(a_qt), Some(b_pr), Some(b_qrs), Some(b_qt)) = (a.pr, a.qrs, a.qt, b.pr, b.qrs, b.qt)
        {
            pr += (a_pr - b_pr).abs();
            qrs += (a_qrs - b_qrs).abs();
            qt += (a_qt - b_qt).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::EmptyAfterExclusion);
    }
    let u = used as f64;
    Ok(IntervalMae { pr: pr / u, qrs: qrs / u, qt: qt / u, used, excluded: recovered.len() - used })
}

/// Mean, sample standard deviation and median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub count: usize,
}

impl Summary {
    /// `None` for an empty list.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        Some(Summary { mean, std: sample_std(values), median, count: n })
    }
}

/// Pearson and rRMSE summaries for one subwave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubwaveSummary {
    pub rho: Option<Summary>,
    pub rrmse: Option<Summary>,
}

/// Per-subwave metrics of one cycle; `None` when a segment is flat or too short.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SubwaveMetrics {
    pub p_rho: Option<f64>,
    pub p_rrmse: Option<f64>,
    pub qrs_rho: Option<f64>,
    pub qrs_rrmse: Option<f64>,
    pub t_rho: Option<f64>,
    pub t_rrmse: Option<f64>,
}

/// Everything measured on one test cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub index: usize,
    /// `None` when the reconstruction or reference is constant.
    pub rho: Option<f64>,
    pub rrmse: Option<f64>,
    pub fs_effective: f64,
    pub fid_ref: Fiducials,
    pub fid_rec: Fiducials,
    pub intervals_ref: Intervals,
    pub intervals_rec: Intervals,
    pub effective: bool,
    pub subwaves: Option<SubwaveMetrics>,
}

/// Mean interval durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMeans {
    pub pr: f64,
    pub qrs: f64,
    pub qt: f64,
}

/// Aggregate evaluation of a reconstruction batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_cycles: usize,
    /// Cycles whose ρ/rRMSE could not be computed (constant signal).
    pub n_degenerate: usize,
    pub rho: Option<Summary>,
    pub rrmse: Option<Summary>,
    pub effective_cycles: usize,
    pub effective_ratio: f64,
    pub subwave_p: SubwaveSummary,
    pub subwave_qrs: SubwaveSummary,
    pub subwave_t: SubwaveSummary,
    pub intervals_ref_mean: Option<IntervalMeans>,
    pub intervals_rec_mean: Option<IntervalMeans>,
    pub interval_mae: Option<IntervalMae>,
    pub per_cycle: Vec<CycleMetrics>,
}

/// Evaluation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Circularly shift each reconstruction so its maximum matches the
    /// reference maximum before measuring.
    pub align_r_peak: bool,
}

fn segment_metrics(reference: &[f64], rec: &[f64], range: &Range<usize>) -> (Option<f64>, Option<f64>) {
    if range.len() < 3 {
        return (None, None);
    }
    let (a, b) = (&reference[range.clone()], &rec[range.clone()]);
    (pearson(a, b).ok(), rrmse(a, b).ok())
}

fn evaluate_cycle(index: usize, reference: &[f64], rec: &[f64], fs_effective: f64, opts: &EvalOptions) -> CycleMetrics {
    let d = reference.len();
    let rec = if opts.align_r_peak { align_r_peak_offset(reference, rec).expect("equal lengths") } else { rec.to_vec() };
    let r_ref = detect_fiducials(reference, fs_effective).r.unwrap_or(0);
    let shift = (R_POSITION * d as f64).floor() as isize - r_ref as isize;
    let reference = rotate(reference, shift);
    let rec = rotate(&rec, shift);

    let rho = pearson(&reference, &rec).ok();
    let rr = rrmse(&reference, &rec).ok();
    let fid_ref = detect_fiducials(&reference, fs_effective);
    let fid_rec = detect_fiducials(&rec, fs_effective);
    let effective = fid_ref.is_complete() && fid_rec.is_complete() && rho.is_some();
    let subwaves = if effective {
        split_subwaves(d, &fid_ref, BorderRule::single_cycle(d)).ok().map(|w| {
            let (p_rho, p_rrmse) = segment_metrics(&reference, &rec, &w.p);
            let (qrs_rho, qrs_rrmse) = segment_metrics(&reference, &rec, &w.qrs);
            let (t_rho, t_rrmse) = segment_metrics(&reference, &rec, &w.t);
            SubwaveMetrics { p_rho, p_rrmse, qrs_rho, qrs_rrmse, t_rho, t_rrmse }
        })
    } else {
        None
    };
    CycleMetrics {
        index,
        rho,
        rrmse: rr,
        fs_effective,
        fid_ref,
        fid_rec,
        intervals_ref: intervals(&fid_ref, fs_effective),
        intervals_rec: intervals(&fid_rec, fs_effective),
        effective,
        subwaves,
    }
}

fn subwave_summary(cycles: &[CycleMetrics], pick: impl Fn(&SubwaveMetrics) -> (Option<f64>, Option<f64>)) -> SubwaveSummary {
    let (mut rho, mut err) = (Vec::new(), Vec::new());
    for m in cycles.iter().filter_map(|c| c.subwaves.as_ref()) {
        let (a, b) = pick(m);
        rho.extend(a);
        err.extend(b);
    }
    SubwaveSummary { rho: Summary::of(&rho), rrmse: Summary::of(&err) }
}

fn interval_means(list: &[Intervals]) -> Option<IntervalMeans> {
    let full: Vec<(f64, f64, f64)> = list.iter().filter_map(|i| Some((i.pr?, i.qrs?, i.qt?))).collect();
    if full.is_empty() {
        return None;
    }
    let n = full.len() as f64;
    Some(IntervalMeans {
        pr: full.iter().map(|v| v.0).sum::<f64>() / n,
        qrs: full.iter().map(|v| v.1).sum::<f64>() / n,
        qt: full.iter().map(|v| v.2).sum::<f64>() / n,
    })
}

/// Evaluates reconstructions `r_e` against references `t_e` (both `d x m`).
/// `fs_effective[j]` converts samples of column `j` to seconds.
pub fn evaluate_batch(r_e: &DMatrix<f64>, t_e: &DMatrix<f64>, fs_effective: &[f64], opts: &EvalOptions) -> Result<EvalReport> {
    if r_e.shape() != t_e.shape() {
        return Err(Error::dims(format!("reconstructions {:?}, references {:?}", r_e.shape(), t_e.shape())));
    }
    let m = t_e.ncols();
    if fs_effective.len() != m {
        return Err(Error::dims(format!("{} sampling rates for {m} cycles", fs_effective.len())));
    }
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    if fs_effective.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::InvalidParams("effective sampling rates must be positive".into()));
    }
    let per_cycle: Vec<CycleMetrics> = (0..m)
        .into_par_iter()
        .map(|j| evaluate_cycle(j, t_e.column(j).as_slice(), r_e.column(j).as_slice(), fs_effective[j], opts))
        .collect();

    let rho: Vec<f64> = per_cycle.iter().filter_map(|c| c.rho).collect();
    let err: Vec<f64> = per_cycle.iter().filter_map(|c| c.rrmse.filter(|_| c.rho.is_some())).collect();
    let effective: Vec<&CycleMetrics> = per_cycle.iter().filter(|c| c.effective).collect();
    let ref_iv: Vec<Intervals> = effective.iter().map(|c| c.intervals_ref).collect();
    let rec_iv: Vec<Intervals> = effective.iter().map(|c| c.intervals_rec).collect();
    let mae = match interval_mae(&rec_iv, &ref_iv) {
        Ok(v) => Some(v),
        Err(Error::EmptyAfterExclusion) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        n_cycles: m,
        n_degenerate: m - rho.len(),
        rho: Summary::of(&rho),
        rrmse: Summary::of(&err),
        effective_cycles: effective.len(),
        effective_ratio: effective.len() as f64 / m as f64,
        subwave_p: subwave_summary(&per_cycle, |s| (s.p_rho, s.p_rrmse)),
        subwave_qrs: subwave_summary(&per_cycle, |s| (s.qrs_rho, s.qrs_rrmse)),
        subwave_t: subwave_summary(&per_cycle, |s| (s.t_rho, s.t_rrmse)),
        intervals_ref_mean: interval_means(&ref_iv),
        intervals_rec_mean: interval_means(&rec_iv),
        interval_mae: mae,
        per_cycle,
    })
}
