//! Record-to-dataset composition.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    detect_ppg_onsets, detect_r_peaks, detrend, normalize_cycle, resample_cycle, segment_r2r, CyclePairSet, FiducialIndexList,
    RawRecord, SegmentationMode, DEFAULT_CYCLE_LEN, DEFAULT_SMOOTHING, MAX_CYCLE_S,
};
use crate::error::{Error, Result};

/// Preprocessing settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub mode: SegmentationMode,
    pub d: usize,
    pub smoothing: f64,
    /// Shift each PPG earlier by its estimated pulse lag so PPG onsets line up
    /// with the preceding R peaks.
    pub align: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { mode: SegmentationMode::R2R, d: DEFAULT_CYCLE_LEN, smoothing: DEFAULT_SMOOTHING, align: true }
    }
}

/// Result of [`build_dataset`] with bookkeeping of what was discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBuild {
    pub set: CyclePairSet,
    /// Cycles skipped because one signal was constant.
    pub skipped_degenerate: usize,
    /// Records that produced fewer than two anchors.
    pub skipped_records: usize,
    /// Pulse lag applied to each record, in samples.
    pub lags: Vec<usize>,
}

/// Median delay from each R peak to the first PPG onset that follows it
/// within the longest accepted cycle. `None` if no R peak has a follower.
pub fn estimate_pulse_lag(r_peaks: &FiducialIndexList, onsets: &FiducialIndexList, fs: f64) -> Option<usize> {
    let on = onsets.as_slice();
    let max_lag = (MAX_CYCLE_S * fs) as usize;
    let mut lags: Vec<usize> = r_peaks
        .as_slice()
        .iter()
        .filter_map(|&r| {
            let k = on.partition_point(|&o| o <= r);
            on.get(k).map(|&o| o - r).filter(|&l| l <= max_lag)
        })
        .collect();
    if lags.is_empty() {
        return None;
    }
    lags.sort_unstable();
    let m = lags.len();
    Some(if m % 2 == 1 { lags[m / 2] } else { (lags[m / 2 - 1] + lags[m / 2]).div_ceil(2) })
}

struct RecordCycles {
    p: Vec<Vec<f64>>,
    e: Vec<Vec<f64>>,
    raw_lengths: Vec<usize>,
    degenerate: usize,
    lag: usize,
    no_anchors: bool,
}

fn process_record(rec: &RawRecord, cfg: &PreprocessConfig) -> Result<RecordCycles> {
    let fs = rec.fs;
    let ppg = detrend(&rec.ppg, cfg.smoothing)?;
    let ecg = detrend(&rec.ecg, cfg.smoothing)?;
    let r_peaks = detect_r_peaks(&ecg, fs)?;
    let onsets = detect_ppg_onsets(&ppg, fs)?;

    let lag = if cfg.align { estimate_pulse_lag(&r_peaks, &onsets, fs).unwrap_or(0) } else { 0 };
    let n = ppg.len() - lag;
    let ppg = &ppg[lag..];
    let ecg = &ecg[..n];

    let anchors: Vec<usize> = match cfg.mode {
        SegmentationMode::R2R => r_peaks.as_slice().iter().copied().filter(|&r| r < n).collect(),
        SegmentationMode::O2O => onsets.as_slice().iter().filter(|&&o| o >= lag).map(|&o| o - lag).collect(),
    };
    let anchors = FiducialIndexList::new(anchors, n)?;
    let pairs = match segment_r2r(ppg, ecg, &anchors, fs) {
        Ok(p) => p,
        Err(Error::InsufficientPeaks(_)) => {
            return Ok(RecordCycles { p: vec![], e: vec![], raw_lengths: vec![], degenerate: 0, lag, no_anchors: true })
        }
        Err(e) => return Err(e),
    };

    let mut out = RecordCycles { p: vec![], e: vec![], raw_lengths: vec![], degenerate: 0, lag, no_anchors: false };
    for pair in pairs {
        let p = normalize_cycle(&resample_cycle(&pair.ppg, cfg.d)?);
        let e = normalize_cycle(&resample_cycle(&pair.ecg, cfg.d)?);
        match (p, e) {
            (Ok(p), Ok(e)) => {
                out.raw_lengths.push(pair.len());
                out.p.push(p);
                out.e.push(e);
            }
            (Err(Error::DegenerateCycle), _) | (_, Err(Error::DegenerateCycle)) => out.degenerate += 1,
            (Err(err), _) | (_, Err(err)) => return Err(err),
        }
    }
    Ok(out)
}

/// Detrends, detects anchors, optionally aligns, segments, resamples and
/// normalises every record. Columns are ordered by record, then by time.
///
/// Under [`SegmentationMode::O2O`] both signals are cut at the PPG onsets.
/// Per-record `labels` are broadcast to all cycles of that record.
pub fn build_dataset(records: &[RawRecord], labels: Option<&[usize]>, cfg: &PreprocessConfig) -> Result<DatasetBuild> {
    if cfg.d < 2 {
        return Err(Error::InvalidParams(format!("cycle length must be at least 2, got {}", cfg.d)));
    }
    if let Some(l) = labels {
        if l.len() != records.len() {
            return Err(Error::dims(format!("{} labels for {} records", l.len(), records.len())));
        }
    }
    let per_record: Vec<RecordCycles> = records.par_iter().map(|r| process_record(r, cfg)).collect::<Result<Vec<_>>>()?;

    let total: usize = per_record.iter().map(|r| r.p.len()).sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = cfg.d;
    let mut p = DMatrix::zeros(d, total);
    let mut e = DMatrix::zeros(d, total);
    let mut record_ids = Vec::with_capacity(total);
    let mut raw_lengths = Vec::with_capacity(total);
    let mut col_labels = labels.map(|_| Vec::with_capacity(total));
    let mut j = 0;
    for (ri, rc) in per_record.iter().enumerate() {
        for (pc, ec) in rc.p.iter().zip(&rc.e) {
            p.column_mut(j).copy_from_slice(pc);
            e.column_mut(j).copy_from_slice(ec);
            j += 1;
        }
        record_ids.extend(std::iter::repeat_n(ri, rc.p.len()));
        raw_lengths.extend_from_slice(&rc.raw_lengths);
        if let (Some(out), Some(l)) = (col_labels.as_mut(), labels) {
            out.extend(std::iter::repeat_n(l[ri], rc.p.len()));
        }
    }
    let set = CyclePairSet { p, e, labels: col_labels, record_ids, raw_lengths, fs: records[0].fs, mode: cfg.mode };
    Ok(DatasetBuild {
        set,
        skipped_degenerate: per_record.iter().map(|r| r.degenerate).sum(),
        skipped_records: per_record.iter().filter(|r| r.no_anchors).count(),
        lags: per_record.iter().map(|r| r.lag).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_is_median_delay() {
        let r = FiducialIndexList::new(vec![10, 110, 210, 310], 400).unwrap();
        let o = FiducialIndexList::new(vec![35, 134, 236, 399], 400).unwrap();
        assert_eq!(estimate_pulse_lag(&r, &o, 125.0), Some(26));
        let none = FiducialIndexList::new(vec![], 400).unwrap();
        assert_eq!(estimate_pulse_lag(&r, &none, 125.0), None);
    }

    #[test]
    fn mismatched_labels_rejected() {
        let rec = RawRecord::new(vec![0.0; 300], vec![0.0; 300], 125.0).unwrap();
        let r = build_dataset(&[rec], Some(&[0, 1]), &PreprocessConfig::default());
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn flat_record_is_empty_dataset() {
        let rec = RawRecord::new(vec![0.0; 500], vec![0.0; 500], 125.0).unwrap();
        let r = build_dataset(&[rec], None, &PreprocessConfig::default());
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }
}
