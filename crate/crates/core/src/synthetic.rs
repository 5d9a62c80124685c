//! Generators with planted ground truth, and an exhaustive sparse-coding
//! oracle.
//!
//! The ECG template is a sum of five Gaussian bumps per beat (P, Q, R, S, T);
//! the PPG is a fast-rise/slow-decay pulse whose onset trails each R peak by a
//! fixed transit time. Every fiducial is therefore known exactly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::RawRecord;
use crate::sparse_coding::{Dictionary, SparseCode, SparseVector};

/// One Gaussian bump. `center` and `width` are fractions of the R-R interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveBump {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl WaveBump {
    const fn new(amplitude: f64, center: f64, width: f64) -> Self {
        WaveBump { amplitude, center, width }
    }
}

/// Synthetic record parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EcgTemplateParams {
    pub p: WaveBump,
    pub q: WaveBump,
    pub r: WaveBump,
    pub s: WaveBump,
    pub t: WaveBump,
    /// Beats per minute.
    pub heart_rate: f64,
    /// Relative R-R jitter: each interval is scaled by `1 + U(-j, j)`.
    pub hr_jitter: f64,
    /// Standard deviation of additive white noise on both signals.
    pub noise_std: f64,
    /// Delay from each R peak to the PPG onset, seconds.
    pub pulse_transit: f64,
    /// PPG rise and decay time constants, seconds.
    pub ppg_rise: f64,
    pub ppg_decay: f64,
    pub seed: u64,
}

impl Default for EcgTemplateParams {
    fn default() -> Self {
        EcgTemplateParams {
            p: WaveBump::new(0.15, 0.15, 0.025),
            q: WaveBump::new(-0.15, 0.265, 0.008),
            r: WaveBump::new(1.0, 0.30, 0.010),
            s: WaveBump::new(-0.25, 0.335, 0.008),
            t: WaveBump::new(0.3, 0.6, 0.05),
            heart_rate: 60.0,
            hr_jitter: 0.0,
            noise_std: 0.0,
            pulse_transit: 0.2,
            ppg_rise: 0.06,
            ppg_decay: 0.3,
            seed: 0,
        }
    }
}

impl EcgTemplateParams {
    pub fn bumps(&self) -> [WaveBump; 5] {
        [self.p, self.q, self.r, self.s, self.t]
    }

    pub fn rr(&self) -> f64 {
        60.0 / self.heart_rate
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.heart_rate > 0.0) || !self.heart_rate.is_finite() {
            return bad("heart_rate must be positive");
        }
        let b = self.bumps();
        if b.iter().any(|w| !(w.center > 0.0 && w.center < 1.0)) {
            return bad("wave centers must lie in (0, 1)");
        }
        if b.windows(2).any(|w| w[0].center >= w[1].center) {
            return bad("wave centers must be strictly increasing P < Q < R < S < T");
        }
        if b.iter().any(|w| !(w.width > 0.0) || !w.amplitude.is_finite()) {
            return bad("wave widths must be positive and amplitudes finite");
        }
        if !(0.0..0.5).contains(&self.hr_jitter) {
            return bad("hr_jitter must be in [0, 0.5)");
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad("noise_std must be non-negative");
        }
        if !(self.pulse_transit >= 0.0) || !(self.ppg_rise > 0.0) || !(self.ppg_decay > 0.0) {
            return bad("pulse_transit must be non-negative and PPG time constants positive");
        }
        Ok(())
    }

    /// PR, QRS and QT durations implied by the template at the nominal rate.
    pub fn implied_intervals(&self) -> PlantedIntervals {
        let rr = self.rr();
        PlantedIntervals {
            pr: (self.r.center - self.p.center) * rr,
            qrs: (self.s.center - self.q.center) * rr,
            qt: (self.t.center - self.q.center) * rr,
        }
    }
}

/// PR, QRS and QT durations in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedIntervals {
    pub pr: f64,
    pub qrs: f64,
    pub qt: f64,
}

/// Sample indices of one planted beat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedBeat {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub s: usize,
    pub t: usize,
}

impl PlantedBeat {
    pub fn intervals(&self, fs: f64) -> PlantedIntervals {
        PlantedIntervals {
            pr: (self.r - self.p) as f64 / fs,
            qrs: (self.s - self.q) as f64 / fs,
            qt: (self.t - self.q) as f64 / fs,
        }
    }
}

/// Ground truth accompanying a synthetic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFiducials {
    /// Every R peak inside the record.
    pub r_peaks: Vec<usize>,
    /// Every PPG onset inside the record.
    pub onsets: Vec<usize>,
    /// Beats whose five points all lie inside the record.
    pub beats: Vec<PlantedBeat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord {
    pub record: RawRecord,
    pub truth: PlantedFiducials,
}

/// Normalised PPG pulse shape `(1 - e^{-u/rise})^2 e^{-u/decay}` for `u >= 0`.
fn pulse(u: f64, rise: f64, decay: f64) -> f64 {
    if u < 0.0 {
        return 0.0;
    }
    // peak of the unnormalised shape
    let u_peak = rise * (1.0 + 2.0 * decay / rise).ln();
    let shape = |v: f64| (1.0 - (-v / rise).exp()).powi(2) * (-v / decay).exp();
    shape(u) / shape(u_peak)
}

fn to_index(time: f64, fs: f64, n: usize) -> Option<usize> {
    let i = (time * fs).round();
    (i >= 0.0 && i < n as f64).then_some(i as usize)
}

/// Generates a paired ECG/PPG record of `duration` seconds with planted
/// fiducials.
pub fn gen_synthetic_record(params: &EcgTemplateParams, duration: f64, fs: f64) -> Result<SyntheticRecord> {
    params.validate()?;
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(Error::InvalidParams(format!("sampling rate must be positive, got {fs}")));
    }
    let rr0 = params.rr();
    if !(duration >= 2.0 * rr0 * (1.0 + params.hr_jitter)) || !duration.is_finite() {
        return Err(Error::InvalidParams(format!("duration {duration} s is shorter than two cycles")));
    }
    let n = (duration * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // beat start times, starting one beat early so the first cycle has history
    let mut starts = vec![(-rr0, rr0)];
    let mut s = 0.0;
    while s < duration {
        let rr = rr0 * (1.0 + params.hr_jitter * rng.random_range(-1.0..=1.0));
        starts.push((s, rr));
        s += rr;
    }

    let bumps = params.bumps();
    let mut ecg = vec![0.0; n];
    let mut ppg = vec![0.0; n];
    let mut truth = PlantedFiducials { r_peaks: vec![], onsets: vec![], beats: vec![] };
    for &(start, rr) in &starts {
        let centres: Vec<f64> = bumps.iter().map(|b| start + b.center * rr).collect();
        let onset = centres[2] + params.pulse_transit;
        for (i, (e, p)) in ecg.iter_mut().zip(ppg.iter_mut()).enumerate() {
            let t = i as f64 / fs;
            for (b, &c) in bumps.iter().zip(&centres) {
                let z = (t - c) / (b.width * rr);
                if z.abs() < 10.0 {
                    *e += b.amplitude * (-0.5 * z * z).exp();
                }
            }
            *p += pulse(t - onset, params.ppg_rise, params.ppg_decay);
        }
        if let Some(r) = to_index(centres[2], fs, n) {
            truth.r_peaks.push(r);
        }
        if let Some(o) = to_index(onset, fs, n) {
            truth.onsets.push(o);
        }
        let idx: Option<Vec<usize>> = centres.iter().map(|&c| to_index(c, fs, n)).collect();
        if let Some(v) = idx {
            truth.beats.push(PlantedBeat { p: v[0], q: v[1], r: v[2], s: v[3], t: v[4] });
        }
    }

    if params.noise_std > 0.0 {
        let noise = Normal::new(0.0, params.noise_std).map_err(|e| Error::InvalidParams(e.to_string()))?;
        for v in ecg.iter_mut() {
            *v += noise.sample(&mut rng);
        }
        for v in ppg.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(SyntheticRecord { record: RawRecord::new(ppg, ecg, fs)?, truth })
}

/// Sizes for [`gen_planted_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSpec {
    pub d: usize,
    pub k_e: usize,
    pub k_p: usize,
    pub t_e: usize,
    pub t_p: usize,
    pub n: usize,
    /// Number of classes; each class draws its PPG codes from its own
    /// contiguous pool of `k_p / class_count` atoms.
    pub class_count: Option<usize>,
    /// With classes, makes the PPG pools near-duplicates of each other: atom
    /// `i` of every pool is `s b_i + sqrt(1 - s^2) u`, with `b_i` shared and
    /// `u` a fresh random unit vector, so the PPG alone barely tells classes
    /// apart while `W` still sends each pool to distinct ECG atoms. Zero keeps
    /// `D_p` orthonormal.
    pub class_similarity: f64,
    /// Draw code coefficients positive and scaled to sum to one, so a class
    /// indicator over each pool maps every code exactly to its class code.
    pub simplex_codes: bool,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            d: 32,
            k_e: 24,
            k_p: 24,
            t_e: 3,
            t_p: 3,
            n: 500,
            class_count: None,
            class_similarity: 0.0,
            simplex_codes: false,
            seed: 0,
        }
    }
}

/// Ground-truth dictionaries and codes. Both dictionaries have orthonormal
/// columns unless [`PlantedSpec::class_similarity`] is set.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    pub d_e: Dictionary,
    pub d_p: Dictionary,
    /// `k_e x k_p`, one nonzero per column.
    pub w: DMatrix<f64>,
    /// PPG codes, `t_p`-sparse.
    pub codes: SparseCode,
    pub labels: Option<Vec<usize>>,
}

/// Planted model together with the data it generates exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedData {
    pub model: PlantedModel,
    pub x_e: DMatrix<f64>,
    pub x_p: DMatrix<f64>,
}

fn random_orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

fn signed_magnitude(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(0.5..=1.5);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Draws orthonormal `D_e`, `D_p`, a sparse coupling `W` and `t_p`-sparse
/// codes, and returns `X_p = D_p A_p`, `X_e = D_e W A_p`.
pub fn gen_planted_model(spec: &PlantedSpec) -> Result<PlantedData> {
    let PlantedSpec { d, k_e, k_p, t_e, t_p, n, class_count, class_similarity, simplex_codes, seed } = *spec;
    let bad = |m: String| Err(Error::InvalidParams(m));
    if k_e == 0 || k_p == 0 || k_e > d || k_p > d {
        return bad(format!("need 1 <= k_e, k_p <= d (d={d}, k_e={k_e}, k_p={k_p})"));
    }
    if t_p == 0 || t_e == 0 || t_e > k_e || t_p > k_p {
        return bad(format!("sparsity bounds out of range (t_e={t_e}, t_p={t_p})"));
    }
    if t_p > t_e {
        return bad(format!("t_p={t_p} exceeds t_e={t_e}; mapped codes would violate the ECG bound"));
    }
    let classes = class_count.unwrap_or(1);
    if classes == 0 || k_p / classes < t_p {
        return bad(format!("each of {classes} classes needs a pool of at least t_p={t_p} atoms"));
    }

    if !(0.0..1.0).contains(&class_similarity) {
        return bad(format!("class_similarity must be in [0, 1), got {class_similarity}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_e = random_orthonormal(d, k_e, &mut rng);
    let mut d_p = random_orthonormal(d, k_p, &mut rng);
    let pool = k_p / classes;
    if class_similarity > 0.0 && classes > 1 {
        let shared = d_p.columns(0, pool).into_owned();
        let (a, b) = (class_similarity, (1.0 - class_similarity * class_similarity).sqrt());
        for c in 0..classes {
            for i in 0..pool {
                let u = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)).normalize();
                d_p.set_column(c * pool + i, &(shared.column(i) * a + u * b).normalize());
            }
        }
    }

    // each PPG atom feeds exactly one ECG atom; injective when k_p <= k_e
    let mut targets: Vec<usize> = rand::seq::index::sample(&mut rng, k_e, k_e.min(k_p)).into_vec();
    while targets.len() < k_p {
        targets.push(rng.random_range(0..k_e));
    }
    let mut w = DMatrix::zeros(k_e, k_p);
    for (j, &i) in targets.iter().enumerate() {
        w[(i, j)] = signed_magnitude(&mut rng);
    }

    let mut labels = Vec::with_capacity(n);
    let mut columns: Vec<SparseVector> = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..classes);
        labels.push(c);
        let mut support: Vec<usize> = rand::seq::index::sample(&mut rng, pool, t_p).into_iter().map(|i| c * pool + i).collect();
        support.sort_unstable();
        let mut col: SparseVector = support.into_iter().map(|i| (i, signed_magnitude(&mut rng))).collect();
        if simplex_codes {
            let total: f64 = col.iter().map(|e| e.1.abs()).sum();
            col.iter_mut().for_each(|e| e.1 = e.1.abs() / total);
        }
        columns.push(col);
    }
    let codes = SparseCode::new(k_p, t_p, columns)?;
    let x_p = codes.left_mul(&d_p);
    let x_e = codes.left_mul(&(&d_e * &w));
    let model =
        PlantedModel { d_e: Dictionary::new(d_e)?, d_p: Dictionary::new(d_p)?, w, codes, labels: class_count.map(|_| labels) };
    Ok(PlantedData { model, x_e, x_p })
}

/// Result of [`brute_force_sparse_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub residual: f64,
}

/// Largest number of supports the oracle will enumerate.
pub const ORACLE_GUARD: u128 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Least squares on a fixed support via SVD.
pub fn support_least_squares(dict: &DMatrix<f64>, x: &DVector<f64>, support: &[usize]) -> (Vec<f64>, f64) {
    if support.is_empty() {
        return (vec![], x.norm());
    }
    let sub = dict.select_columns(support.iter());
    let coef = sub.clone().svd(true, true).solve(x, 1e-12).expect("both factors requested");
    let residual = (x - &sub * &coef).norm();
    (coef.iter().copied().collect(), residual)
}

/// Exhaustive least squares over every support of size at most `t`.
///
/// Supports are visited by size, then lexicographically; a later support
/// replaces the incumbent only if it lowers the residual by more than 1e-12,
/// so ties resolve to the smallest, lexicographically first support.
pub fn brute_force_sparse_oracle(dict: &Dictionary, x: &DVector<f64>, t: usize) -> Result<OracleSolution> {
    let (m, k) = (dict.dim(), dict.n_atoms());
    if x.len() != m {
        return Err(Error::dims(format!("signal has {} rows, dictionary {m}", x.len())));
    }
    if t > k {
        return Err(Error::SparsityExceedsAtoms { t, k });
    }
    let total: u128 = (0..=t).map(|s| binomial(k, s)).sum();
    if total > ORACLE_GUARD {
        return Err(Error::CombinatorialGuard(total));
    }
    let atoms = dict.atoms();
    let mut best = OracleSolution { support: vec![], coefficients: vec![], residual: x.norm() };
    for size in 1..=t {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let (coef, res) = support_least_squares(atoms, x, &idx);
            if res < best.residual - 1e-12 {
                best = OracleSolution { support: idx.clone(), coefficients: coef, residual: res };
            }
            // next combination in lexicographic order
            let mut i = size;
            while i > 0 && idx[i - 1] == k - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    Ok(best)
}
