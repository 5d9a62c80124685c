//! Cross-domain joint dictionary learning (XDJDL) and its label-consistent
//! variant for inferring ECG cycles from paired PPG cycles.
//!
//! The crate is organised along the processing pipeline:
//!
//! - [`preprocess`]: detrending, beat/onset detection, segmentation,
//!   resampling and normalisation of raw paired recordings.
//! - [`sparse_coding`]: orthogonal matching pursuit and joint (block-sparse)
//!   coding over stacked dictionaries.
//! - [`dict_learning`]: K-SVD atom updates and the XDJDL / LC-XDJDL
//!   training loops.
//! - [`inference`]: test-time reconstruction, the DCT-linear baseline and
//!   R-peak offset compensation.
//! - [`evaluate`]: Pearson/rRMSE, fiducial points, subwaves and interval MAE.
//! - [`synthetic`]: generators with planted ground truth and brute-force
//!   oracles.
//! - [`data_io`]: CSV/JSON/binary persistence.

pub mod data_io;
pub mod dict_learning;
pub mod error;
pub mod evaluate;
pub mod inference;
pub mod linalg;
pub mod preprocess;
pub mod sparse_coding;
pub mod synthetic;

pub use dict_learning::{HyperParams, LcXdjdlModel, XdjdlModel};
pub use error::{Error, Result};
pub use evaluate::EvalReport;
pub use inference::{DctBaselineModel, ReconstructionBatch};
pub use preprocess::{CyclePairSet, RawRecord, SegmentationMode};
pub use sparse_coding::{Dictionary, JointSparsityBounds, SparseCode};

pub use nalgebra::{DMatrix, DVector};
