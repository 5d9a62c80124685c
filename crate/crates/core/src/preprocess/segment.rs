//! Cycle segmentation, resampling and amplitude normalisation.

use super::{FiducialIndexList, MAX_CYCLE_S, MIN_CYCLE_S};
use crate::error::{Error, Result};

/// A single-signal cycle cut from a record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCycle {
    /// Index of the first sample in the source record.
    pub start: usize,
    pub samples: Vec<f64>,
}

/// A PPG/ECG cycle pair cut at identical indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCyclePair {
    pub start: usize,
    pub ppg: Vec<f64>,
    pub ecg: Vec<f64>,
}

impl RawCyclePair {
    pub fn len(&self) -> usize {
        self.ppg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ppg.is_empty()
    }
}

fn accepted_spans(marks: &FiducialIndexList, fs: f64, len: usize) -> Result<Vec<(usize, usize)>> {
    let m = marks.as_slice();
    if m.len() < 2 {
        return Err(Error::InsufficientPeaks(m.len()));
    }
    if m[m.len() - 1] > len {
        return Err(Error::InvalidParams(format!("fiducial index beyond signal length {len}")));
    }
    let (lo, hi) = (MIN_CYCLE_S * fs, MAX_CYCLE_S * fs);
    Ok(m.windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|&(a, b)| {
            let l = (b - a) as f64;
            l >= lo && l <= hi
        })
        .collect())
}

/// Cuts both signals at consecutive R peaks. Cycle `j` spans
/// `[r_j, r_{j+1})`; cycles outside the accepted duration window are dropped.
pub fn segment_r2r(ppg: &[f64], ecg: &[f64], r_peaks: &FiducialIndexList, fs: f64) -> Result<Vec<RawCyclePair>> {
    if ppg.len() != ecg.len() {
        return Err(Error::dims(format!("ppg has {} samples, ecg {}", ppg.len(), ecg.len())));
    }
    super::check_fs(fs)?;
    Ok(accepted_spans(r_peaks, fs, ppg.len())?
        .into_iter()
        .map(|(a, b)| RawCyclePair { start: a, ppg: ppg[a..b].to_vec(), ecg: ecg[a..b].to_vec() })
        .collect())
}

/// Cuts a single signal at consecutive onsets.
pub fn segment_o2o(ppg: &[f64], onsets: &FiducialIndexList, fs: f64) -> Result<Vec<RawCycle>> {
    super::check_fs(fs)?;
    Ok(accepted_spans(onsets, fs, ppg.len())?
        .into_iter()
        .map(|(a, b)| RawCycle { start: a, samples: ppg[a..b].to_vec() })
        .collect())
}

/// Linear interpolation onto `d` points evenly spaced over the cycle span.
/// Endpoints are preserved exactly.
pub fn resample_cycle(cycle: &[f64], d: usize) -> Result<Vec<f64>> {
    super::require_len(cycle.len(), 2)?;
    if d < 2 {
        return Err(Error::InvalidParams(format!("cycle length must be at least 2, got {d}")));
    }
    let n = cycle.len();
    if n == d {
        return Ok(cycle.to_vec());
    }
    let step = (n - 1) as f64 / (d - 1) as f64;
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        if j == d - 1 {
            out.push(cycle[n - 1]);
            continue;
        }
        let pos = j as f64 * step;
        let i = (pos.floor() as usize).min(n - 2);
        let frac = pos - i as f64;
        out.push(cycle[i] + frac * (cycle[i + 1] - cycle[i]));
    }
    Ok(out)
}

/// Subtracts the sample mean and divides by the sample standard deviation.
pub fn normalize_cycle(cycle: &[f64]) -> Result<Vec<f64>> {
    super::require_len(cycle.len(), 2)?;
    let n = cycle.len() as f64;
    let mean = cycle.iter().sum::<f64>() / n;
    let centred: Vec<f64> = cycle.iter().map(|v| v - mean).collect();
    let std = (centred.iter().map(|v| v * v).sum::<f64>() / (n - 1.0)).sqrt();
    if !(std > 1e-12) {
        return Err(Error::DegenerateCycle);
    }
    Ok(centred.into_iter().map(|v| v / std).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn marks(v: &[usize], len: usize) -> FiducialIndexList {
        FiducialIndexList::new(v.to_vec(), len).unwrap()
    }

    #[test]
    fn r2r_index_arithmetic() {
        let x: Vec<f64> = (0..400).map(|i| i as f64).collect();
        let pairs = segment_r2r(&x, &x, &marks(&[100, 225, 350], 400), 125.0).unwrap();
        assert_eq!(pairs.iter().map(|p| p.len()).collect::<Vec<_>>(), vec![125, 125]);
        assert_eq!(pairs[0].ppg[0], 100.0);
        assert_eq!(pairs[1].ecg[0], 225.0);
    }

    #[test]
    fn short_cycles_are_dropped() {
        let x = vec![0.0; 100];
        assert!(segment_r2r(&x, &x, &marks(&[0, 10], 100), 125.0).unwrap().is_empty());
    }

    #[test]
    fn o2o_cuts_and_errors() {
        let x = vec![1.0; 400];
        let c = segment_o2o(&x, &marks(&[50, 175, 300], 400), 125.0).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.samples.len() == 125));
        assert!(matches!(segment_o2o(&x, &marks(&[50], 400), 125.0), Err(Error::InsufficientPeaks(1))));
    }

    #[test]
    fn resample_examples() {
        let x: Vec<f64> = (0..300).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(resample_cycle(&x, 300).unwrap(), x);
        assert!(resample_cycle(&[5.0; 17], 300).unwrap().iter().all(|&v| v == 5.0));
        let line: Vec<f64> = (0..150).map(|i| i as f64).collect();
        let y = resample_cycle(&line, 300).unwrap();
        assert_eq!(y[0], 0.0);
        assert_eq!(y[299], 149.0);
        for (j, v) in y.iter().enumerate() {
            assert!((v - j as f64 * 149.0 / 299.0).abs() < 1e-9);
        }
        assert!(matches!(resample_cycle(&[1.0], 10), Err(Error::SequenceTooShort { .. })));
    }

    #[test]
    fn normalize_examples() {
        let y = normalize_cycle(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![-1.0, 0.0, 1.0]);
        assert!(matches!(normalize_cycle(&[4.0; 8]), Err(Error::DegenerateCycle)));
    }

    proptest! {
        #[test]
        fn normalized_moments(v in prop::collection::vec(-1e3f64..1e3, 3..200)) {
            prop_assume!({
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|x| (x - m).abs()).fold(0.0, f64::max) > 1e-6
            });
            let y = normalize_cycle(&v).unwrap();
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let std = (y.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }

        #[test]
        fn resample_keeps_monotone(mut v in prop::collection::vec(-1e3f64..1e3, 2..100), d in 2usize..400) {
            v.sort_by(f64::total_cmp);
            let y = resample_cycle(&v, d).unwrap();
            prop_assert_eq!(y[0], v[0]);
            prop_assert_eq!(y[d - 1], v[v.len() - 1]);
            prop_assert!(y.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
