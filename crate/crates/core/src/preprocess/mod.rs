//! Raw paired recordings to aligned, fixed-length, normalised cycle pairs.

mod beats;
mod dataset;
mod detrend;
mod segment;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use beats::{detect_ppg_onsets, detect_r_peaks};
pub use dataset::{build_dataset, estimate_pulse_lag, DatasetBuild, PreprocessConfig};
pub use detrend::detrend;
pub use segment::{normalize_cycle, resample_cycle, segment_o2o, segment_r2r, RawCycle, RawCyclePair};

/// Default smoothness-priors parameter at 125 Hz.
pub const DEFAULT_SMOOTHING: f64 = 300.0;
/// Default normalised cycle length.
pub const DEFAULT_CYCLE_LEN: usize = 300;
/// Shortest accepted cycle, seconds.
pub const MIN_CYCLE_S: f64 = 0.25;
/// Longest accepted cycle, seconds.
pub const MAX_CYCLE_S: f64 = 2.0;

/// A paired PPG/ECG recording sampled at `fs` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub ppg: Vec<f64>,
    pub ecg: Vec<f64>,
    pub fs: f64,
}

impl RawRecord {
    pub fn new(ppg: Vec<f64>, ecg: Vec<f64>, fs: f64) -> Result<Self> {
        if ppg.len() != ecg.len() {
            return Err(Error::dims(format!("ppg has {} samples, ecg {}", ppg.len(), ecg.len())));
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::InvalidParams(format!("sampling rate must be positive, got {fs}")));
        }
        Ok(RawRecord { ppg, ecg, fs })
    }

    pub fn len(&self) -> usize {
        self.ppg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ppg.is_empty()
    }
}

/// Strictly increasing sample indices into a sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FiducialIndexList(Vec<usize>);

impl FiducialIndexList {
    /// Validates ordering and bounds against a sequence of length `len`.
    pub fn new(indices: Vec<usize>, len: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams("fiducial indices must be strictly increasing".into()));
        }
        if indices.last().is_some_and(|&i| i >= len) {
            return Err(Error::InvalidParams(format!("fiducial index out of bounds for length {len}")));
        }
        Ok(FiducialIndexList(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

/// Segmentation anchor: ECG R peaks or PPG onsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SegmentationMode {
    #[default]
    R2R,
    O2O,
}

/// Paired cycle matrices, one cycle per column.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclePairSet {
    /// PPG cycles, `d x N`.
    pub p: DMatrix<f64>,
    /// ECG cycles, `d x N`.
    pub e: DMatrix<f64>,
    /// Optional class id per column.
    pub labels: Option<Vec<usize>>,
    /// Source record of each column.
    pub record_ids: Vec<usize>,
    /// Length in samples of each cycle before resampling.
    pub raw_lengths: Vec<usize>,
    /// Sampling rate of the source recordings.
    pub fs: f64,
    pub mode: SegmentationMode,
}

impl CyclePairSet {
    pub fn d(&self) -> usize {
        self.p.nrows()
    }

    pub fn len(&self) -> usize {
        self.p.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.p.ncols() == 0
    }

    /// Effective sampling rate of column `j` after resampling to `d` points.
    pub fn effective_fs(&self, j: usize) -> f64 {
        let raw = self.raw_lengths[j];
        if raw < 2 {
            return self.fs;
        }
        self.fs * (self.d() as f64 - 1.0) / (raw as f64 - 1.0)
    }

    /// Checks shape and bookkeeping consistency.
    pub fn check_shapes(&self) -> Result<()> {
        let n = self.len();
        if self.p.shape() != self.e.shape() {
            return Err(Error::ShapeMismatch(format!("P is {:?}, E is {:?}", self.p.shape(), self.e.shape())));
        }
        if self.record_ids.len() != n || self.raw_lengths.len() != n {
            return Err(Error::ShapeMismatch("per-column metadata length differs from N".into()));
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::ShapeMismatch(format!("{} labels for {n} columns", l.len())));
            }
        }
        Ok(())
    }

    /// Checks every column has mean 0 and sample std 1.
    pub fn check_normalized(&self) -> Result<()> {
        for (name, m) in [("P", &self.p), ("E", &self.e)] {
            for (j, c) in m.column_iter().enumerate() {
                let d = c.len() as f64;
                let mean = c.sum() / d;
                let std = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d - 1.0)).sqrt();
                if mean.abs() >= 1e-9 || (std - 1.0).abs() >= 1e-6 {
                    return Err(Error::InvalidParams(format!("{name} column {j} not normalised")));
                }
            }
        }
        Ok(())
    }

    /// Selects a subset of columns, preserving order and metadata.
    pub fn select(&self, cols: &[usize]) -> CyclePairSet {
        CyclePairSet {
            p: self.p.select_columns(cols.iter()),
            e: self.e.select_columns(cols.iter()),
            labels: self.labels.as_ref().map(|l| cols.iter().map(|&j| l[j]).collect()),
            record_ids: cols.iter().map(|&j| self.record_ids[j]).collect(),
            raw_lengths: cols.iter().map(|&j| self.raw_lengths[j]).collect(),
            fs: self.fs,
            mode: self.mode,
        }
    }

    /// Chronological per-record split: the first `ratio` of each record's
    /// cycles go to training, the rest to testing. Returns column indices.
    pub fn chronological_split(&self, ratio: f64) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidParams(format!("train ratio must be in (0, 1), got {ratio}")));
        }
        let mut by_record: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (j, &r) in self.record_ids.iter().enumerate() {
            by_record.entry(r).or_default().push(j);
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for cols in by_record.values() {
            let cut = ((cols.len() as f64) * ratio).round() as usize;
            let cut = cut.min(cols.len());
            train.extend_from_slice(&cols[..cut]);
            test.extend_from_slice(&cols[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((train, test))
    }
}

pub(crate) fn require_len(len: usize, needed: usize) -> Result<()> {
    if len < needed {
        return Err(Error::SequenceTooShort { needed, got: len });
    }
    Ok(())
}

pub(crate) fn check_fs(fs: f64) -> Result<()> {
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(Error::InvalidParams(format!("sampling rate must be positive, got {fs}")));
    }
    Ok(())
}
