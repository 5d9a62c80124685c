//! Beat fiducial detectors: ECG R peaks and PPG pulse onsets.

use std::f64::consts::PI;

use super::{check_fs, require_len, FiducialIndexList, MIN_CYCLE_S};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(f0: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (c, alpha) = (w0.cos(), w0.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2));
        let a0 = 1.0 + alpha;
        Biquad { b: [(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0], a: [-2.0 * c / a0, (1.0 - alpha) / a0] }
    }

    fn highpass(f0: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (c, alpha) = (w0.cos(), w0.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2));
        let a0 = 1.0 + alpha;
        Biquad { b: [(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0], a: [-2.0 * c / a0, (1.0 - alpha) / a0] }
    }

    fn run(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b[0] * *v + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = *v;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding.
    fn filtfilt(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let n = x.len();
        let pad = pad.min(n.saturating_sub(1));
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.run(&mut ext);
        ext.reverse();
        self.run(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

fn peak_to_peak(x: &[f64]) -> f64 {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    hi - lo
}

fn centered_mean(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let half = width / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn local_maxima(x: &[f64]) -> Vec<usize> {
    (1..x.len().saturating_sub(1)).filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1]).collect()
}

fn argmax_in(x: &[f64], lo: usize, hi: usize) -> usize {
    let mut best = lo;
    for i in lo..hi {
        if x[i] > x[best] {
            best = i;
        }
    }
    best
}

/// Detects ECG R peaks.
///
/// Pan-Tompkins style: 5-15 Hz zero-phase band-pass, derivative, squaring,
/// 150 ms moving-window integration and adaptive signal/noise thresholds with
/// a 250 ms refractory period and search-back for missed beats. Each detection
/// is refined to the maximum of `ecg` within +/-100 ms.
pub fn detect_r_peaks(ecg: &[f64], fs: f64) -> Result<FiducialIndexList> {
    check_fs(fs)?;
    require_len(ecg.len(), (2.0 * fs).ceil() as usize)?;
    let n = ecg.len();
    if !(peak_to_peak(ecg) > 1e-12) {
        return Ok(FiducialIndexList::default());
    }

    let pad = (fs * 0.5).round() as usize;
    let band = Biquad::lowpass(15.0, fs).filtfilt(&Biquad::highpass(5.0, fs).filtfilt(ecg, pad), pad);
    let mut energy = vec![0.0; n];
    for i in 1..n - 1 {
        let dv = (band[i + 1] - band[i - 1]) / 2.0;
        energy[i] = dv * dv;
    }
    let mwi = centered_mean(&energy, ((0.15 * fs).round() as usize).max(1));
    let max_mwi = mwi.iter().cloned().fold(0.0, f64::max);
    if !(max_mwi > 1e-12 * peak_to_peak(ecg).powi(2)) {
        return Ok(FiducialIndexList::default());
    }

    let refractory = (MIN_CYCLE_S * fs).round() as usize;
    let learn = ((2.0 * fs) as usize).min(n);
    let mut sig_lev = mwi[..learn].iter().cloned().fold(0.0, f64::max) / 3.0;
    let mut noise_lev = mwi[..learn].iter().sum::<f64>() / learn as f64 / 2.0;
    let mut thr = noise_lev + 0.25 * (sig_lev - noise_lev);

    let candidates = local_maxima(&mwi);
    let mut accepted: Vec<usize> = Vec::new();
    let mut rr_recent: Vec<usize> = Vec::new();
    let mut last_checked = 0usize;

    for (ci, &c) in candidates.iter().enumerate() {
        let v = mwi[c];
        // search-back for a missed beat in a long gap
        if let Some(&last) = accepted.last() {
            if !rr_recent.is_empty() {
                let mean_rr = rr_recent.iter().sum::<usize>() as f64 / rr_recent.len() as f64;
                if (c - last) as f64 > 1.66 * mean_rr {
                    let best = candidates[last_checked..ci]
                        .iter()
                        .copied()
                        .filter(|&k| k > last + refractory && k + refractory < c && mwi[k] >= 0.5 * thr)
                        .max_by(|&a, &b| mwi[a].total_cmp(&mwi[b]).then(b.cmp(&a)));
                    if let Some(k) = best {
                        rr_recent.push(k - last);
                        accepted.push(k);
                        sig_lev = 0.25 * mwi[k] + 0.75 * sig_lev;
                    }
                }
            }
        }
        last_checked = ci;

        if v >= thr {
            match accepted.last() {
                Some(&last) if c - last < refractory => {
                    if v > mwi[last] {
                        *accepted.last_mut().expect("non-empty") = c;
                    }
                }
                last => {
                    if let Some(&l) = last {
                        rr_recent.push(c - l);
                        if rr_recent.len() > 8 {
                            rr_recent.remove(0);
                        }
                    }
                    accepted.push(c);
                }
            }
            sig_lev = 0.125 * v + 0.875 * sig_lev;
        } else {
            noise_lev = 0.125 * v + 0.875 * noise_lev;
        }
        thr = noise_lev + 0.25 * (sig_lev - noise_lev);
    }

    let half = ((0.1 * fs).round() as usize).max(1);
    let mut peaks: Vec<usize> = Vec::with_capacity(accepted.len());
    for c in accepted {
        let r = argmax_in(ecg, c.saturating_sub(half), (c + half + 1).min(n));
        match peaks.last() {
            Some(&prev) if r <= prev || r - prev < refractory => {
                if ecg[r] > ecg[prev] {
                    *peaks.last_mut().expect("non-empty") = r;
                }
            }
            _ => peaks.push(r),
        }
    }
    FiducialIndexList::new(peaks, n)
}

/// Detects PPG pulse onsets: for each beat, the local minimum immediately
/// preceding the steepest upslope.
///
/// Upslope peaks are local maxima of the (40 ms smoothed) first difference
/// above 35% of its 99th percentile, separated by at least 250 ms (largest
/// first). From each one the smoothed signal is walked backwards while it keeps
/// decreasing; the stopping point is the onset.
pub fn detect_ppg_onsets(ppg: &[f64], fs: f64) -> Result<FiducialIndexList> {
    check_fs(fs)?;
    require_len(ppg.len(), (2.0 * fs).ceil() as usize)?;
    let n = ppg.len();
    if !(peak_to_peak(ppg) > 1e-12) {
        return Ok(FiducialIndexList::default());
    }
    let smooth = centered_mean(ppg, ((0.04 * fs).round() as usize).max(1));
    let mut slope = vec![0.0; n];
    for i in 1..n - 1 {
        slope[i] = (smooth[i + 1] - smooth[i - 1]) / 2.0;
    }
    let mut positive: Vec<f64> = slope.iter().copied().filter(|v| *v > 0.0).collect();
    if positive.is_empty() {
        return Ok(FiducialIndexList::default());
    }
    positive.sort_by(f64::total_cmp);
    let p99 = positive[((positive.len() - 1) as f64 * 0.99).round() as usize];
    let thr = 0.35 * p99;

    let refractory = (MIN_CYCLE_S * fs).round() as usize;
    let mut cands: Vec<usize> = local_maxima(&slope).into_iter().filter(|&i| slope[i] >= thr).collect();
    cands.sort_by(|&a, &b| slope[b].total_cmp(&slope[a]).then(a.cmp(&b)));
    let mut upslopes: Vec<usize> = Vec::new();
    for c in cands {
        if upslopes.iter().all(|&u| u.abs_diff(c) >= refractory) {
            upslopes.push(c);
        }
    }
    upslopes.sort_unstable();

    let max_walk = fs.round() as usize;
    let mut onsets: Vec<usize> = Vec::with_capacity(upslopes.len());
    let mut prev = 0usize;
    for &u in &upslopes {
        let lo = prev.max(u.saturating_sub(max_walk));
        let mut j = u;
        while j > lo && smooth[j - 1] <= smooth[j] {
            j -= 1;
        }
        prev = u;
        if j == 0 {
            continue;
        }
        if onsets.last().is_none_or(|&o| j > o) {
            onsets.push(j);
        }
    }
    FiducialIndexList::new(onsets, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn flat_inputs_give_nothing() {
        assert!(detect_r_peaks(&[0.0; 1250], 125.0).unwrap().is_empty());
        assert!(detect_ppg_onsets(&[0.0; 1250], 125.0).unwrap().is_empty());
        assert!(detect_r_peaks(&[2.5; 1250], 125.0).unwrap().is_empty());
    }

    #[test]
    fn short_inputs_are_rejected() {
        assert!(matches!(detect_r_peaks(&[0.0; 100], 125.0), Err(Error::SequenceTooShort { .. })));
        assert!(matches!(detect_ppg_onsets(&[0.0; 100], 125.0), Err(Error::SequenceTooShort { .. })));
    }

    #[test]
    fn sinusoid_onsets_sit_at_minima() {
        let fs = 125.0;
        let x: Vec<f64> = (0..1250).map(|i| (2.0 * PI * i as f64 / fs).sin()).collect();
        let onsets = detect_ppg_onsets(&x, fs).unwrap();
        // minima of sin(2 pi t) at t = 0.75 + k
        assert!(onsets.len() >= 9, "{:?}", onsets);
        for &o in onsets.as_slice() {
            let t = o as f64 / fs;
            let k = (t - 0.75).round();
            let dist = ((t - 0.75 - k) * fs).abs();
            assert!(dist <= 3.0, "onset {o} is {dist} samples from a minimum");
        }
    }

    #[test]
    fn filtfilt_preserves_constant_for_lowpass() {
        let y = Biquad::lowpass(15.0, 125.0).filtfilt(&[1.0; 300], 60);
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }
}
