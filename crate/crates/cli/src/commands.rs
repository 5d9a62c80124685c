//! Subcommand implementations. Each reads its inputs from the output
//! directory, writes its artifacts there and returns a short summary line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xdjdl_core::data_io::{
    load_model, read_cycles, read_json, read_labels, read_matrix_csv, read_signals, save_model, write_cycles, write_json,
    write_labels, write_matrix_csv, write_per_cycle_csv, write_signals, StoredModel,
};
use xdjdl_core::dict_learning::{train_lc_xdjdl, train_xdjdl};
use xdjdl_core::evaluate::{evaluate_batch, EvalOptions, Summary};
use xdjdl_core::inference::{infer_dct_baseline, infer_ecg, infer_ecg_lc_labels, train_dct_baseline};
use xdjdl_core::preprocess::{build_dataset, CyclePairSet, SegmentationMode};
use xdjdl_core::synthetic::{gen_planted_model, gen_synthetic_record, EcgTemplateParams};
use xdjdl_core::{DMatrix, Error, EvalReport};

use crate::config::{RunConfig, SynthKind, Variant};
use crate::CliError;

/// Train/test column indices into the cycle set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Evaluation output written to `report.json`.
#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    variant: &'a str,
    train_indices: &'a [usize],
    test_indices: &'a [usize],
    align_r_peak: bool,
    report: &'a EvalReport,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e }.into())
}

fn require_file(p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Missing(p.to_path_buf()))
    }
}

/// Writes synthetic records with ground truth, or a planted cycle set.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let s = &cfg.synth;
    ensure_dir(out)?;
    match s.kind {
        SynthKind::Records => {
            let dir = RunConfig::resolve(out, &cfg.paths.records);
            ensure_dir(&dir)?;
            for i in 0..s.records {
                let params = EcgTemplateParams {
                    heart_rate: s.template.heart_rate + s.heart_rate_step * i as f64,
                    seed: s.seed.wrapping_add(i as u64),
                    ..s.template
                };
                let rec = gen_synthetic_record(&params, s.duration, s.fs)?;
                write_signals(&rec.record, &dir.join(format!("record_{i:03}.csv")), true)?;
                write_json(&rec.truth, &dir.join(format!("record_{i:03}.truth.json")))?;
            }
            Ok(format!("wrote {} records to {}", s.records, dir.display()))
        }
        SynthKind::Planted => {
            let spec = xdjdl_core::synthetic::PlantedSpec { seed: s.seed, ..s.planted };
            let data = gen_planted_model(&spec)?;
            let n = data.x_e.ncols();
            let set = CyclePairSet {
                p: data.x_p,
                e: data.x_e,
                labels: data.model.labels.clone(),
                record_ids: vec![0; n],
                raw_lengths: vec![spec.d; n],
                fs: s.fs,
                mode: SegmentationMode::R2R,
            };
            let cycles = RunConfig::resolve(out, &cfg.paths.cycles);
            write_cycles(&set, &cycles)?;
            if let Some(l) = &set.labels {
                write_labels(l, &out.join("labels.csv"))?;
            }
            Ok(format!("wrote {n} planted cycle pairs (d = {}) to {}", spec.d, cycles.display()))
        }
    }
}

fn record_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Missing(dir.join("*.csv")));
    }
    Ok(files)
}

/// Detrends, segments, resamples and normalises every record.
pub fn preprocess(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let dir = RunConfig::resolve(out, &cfg.paths.records);
    let files = record_files(&dir)?;
    let records = files.iter().map(|f| read_signals(f, cfg.preprocess.default_fs)).collect::<Result<Vec<_>, _>>()?;
    let labels = cfg.preprocess.record_labels.as_deref();
    if let Some(l) = labels {
        if l.len() != records.len() {
            return Err(CliError::Config(format!(
                "preprocess.record_labels has {} entries for {} records",
                l.len(),
                records.len()
            )));
        }
    }
    let build = build_dataset(&records, labels, &cfg.preprocess.core)?;
    let cycles = RunConfig::resolve(out, &cfg.paths.cycles);
    write_cycles(&build.set, &cycles)?;
    if let Some(l) = &build.set.labels {
        write_labels(l, &out.join("labels.csv"))?;
    }
    Ok(format!(
        "{} cycle pairs from {} records ({} degenerate cycles, {} records skipped)",
        build.set.len(),
        records.len(),
        build.skipped_degenerate,
        build.skipped_records
    ))
}

fn class_count_of(cfg: &RunConfig, labels: &[usize]) -> usize {
    cfg.train.class_count.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1))
}

/// Loads the cycle set and applies the optional label file override.
fn load_cycles(cfg: &RunConfig, out: &Path) -> Result<CyclePairSet, CliError> {
    let cycles = RunConfig::resolve(out, &cfg.paths.cycles);
    require_file(&cycles)?;
    let mut set = read_cycles(&cycles)?;
    if let Some(lp) = &cfg.paths.labels {
        let lp = RunConfig::resolve(out, lp);
        require_file(&lp)?;
        let classes = cfg.train.class_count.unwrap_or(usize::MAX);
        set.labels = Some(read_labels(&lp, set.len(), classes)?);
    }
    Ok(set)
}

fn labels_for(set: &CyclePairSet) -> Result<&[usize], CliError> {
    set.labels.as_deref().ok_or_else(|| CliError::Config("variant lc_xdjdl needs labels (cycle set or paths.labels)".into()))
}

/// Splits the cycle set chronologically and trains the configured variant.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let set = load_cycles(cfg, out)?;
    let (train_idx, test_idx) = set.chronological_split(cfg.split.train_ratio)?;
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::TooFewSamples { n: set.len(), k: 2 }.into());
    }
    let tr = set.select(&train_idx);
    let hyper = &cfg.train.hyper;
    let (model, detail) = match cfg.train.variant {
        Variant::Xdjdl => {
            let m = train_xdjdl(&tr.e, &tr.p, hyper)?;
            let d = format!("{} iterations, objective {:.6e}", m.iterations.len(), m.trace.last().copied().unwrap_or(f64::NAN));
            (StoredModel::Xdjdl(m), d)
        }
        Variant::LcXdjdl => {
            let labels = labels_for(&tr)?;
            let classes = class_count_of(cfg, labels);
            let m = train_lc_xdjdl(&tr.e, &tr.p, labels, classes, hyper)?;
            let b = &m.base;
            let d = format!("{} iterations, objective {:.6e}", b.iterations.len(), b.trace.last().copied().unwrap_or(f64::NAN));
            (StoredModel::LcXdjdl(m), d)
        }
        Variant::Dct => (StoredModel::Dct(train_dct_baseline(&tr.e, &tr.p, cfg.train.dct_ridge)?), "closed form".into()),
    };
    save_model(&model, &RunConfig::resolve(out, &cfg.paths.model))?;
    write_json(&SplitFile { train: train_idx, test: test_idx }, &RunConfig::resolve(out, &cfg.paths.split))?;
    Ok(format!("trained {} on {} cycles: {detail}", model.kind(), tr.len()))
}

fn load_split(cfg: &RunConfig, out: &Path, n: usize) -> Result<SplitFile, CliError> {
    let p = RunConfig::resolve(out, &cfg.paths.split);
    require_file(&p)?;
    let split: SplitFile = read_json(&p)?;
    if split.train.iter().chain(&split.test).any(|&j| j >= n) {
        return Err(Error::ShapeMismatch(format!("split indices exceed the {n} cycles in the set")).into());
    }
    Ok(split)
}

/// Reconstructs the ECG of every test cycle from its PPG.
pub fn infer(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let model_path = RunConfig::resolve(out, &cfg.paths.model);
    require_file(&model_path)?;
    let model = load_model(&model_path)?;
    let set = load_cycles(cfg, out)?;
    let split = load_split(cfg, out, set.len())?;
    let test = set.select(&split.test);
    let r_e: DMatrix<f64> = match &model {
        StoredModel::Xdjdl(m) => infer_ecg(m, &test.p)?.r_e,
        StoredModel::LcXdjdl(m) => infer_ecg_lc_labels(m, &test.p, labels_for(&test)?)?.r_e,
        StoredModel::Dct(m) => infer_dct_baseline(m, &test.p)?,
    };
    let rec = RunConfig::resolve(out, &cfg.paths.reconstruction);
    write_matrix_csv(&r_e, &rec)?;
    Ok(format!("reconstructed {} test cycles with {} into {}", r_e.ncols(), model.kind(), rec.display()))
}

fn fmt_summary(s: Option<Summary>) -> String {
    match s {
        Some(s) => format!("{:>9.4} {:>9.4} {:>9.4} {:>6}", s.mean, s.std, s.median, s.count),
        None => format!("{:>9} {:>9} {:>9} {:>6}", "-", "-", "-", 0),
    }
}

fn ms(v: f64) -> String {
    format!("{:.1}", v * 1e3)
}

/// Plain-text aggregate table.
pub fn render_table(variant: &str, r: &EvalReport) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "variant {variant}: {} test cycles, {} degenerate", r.n_cycles, r.n_degenerate);
    let _ = writeln!(t, "{:<12} {:>9} {:>9} {:>9} {:>6}", "metric", "mean", "std", "median", "n");
    let _ = writeln!(t, "{:<12} {}", "rho", fmt_summary(r.rho));
    let _ = writeln!(t, "{:<12} {}", "rrmse", fmt_summary(r.rrmse));
    for (name, sw) in [("P", r.subwave_p), ("QRS", r.subwave_qrs), ("T", r.subwave_t)] {
        let _ = writeln!(t, "{:<12} {}", format!("{name} rho"), fmt_summary(sw.rho));
        let _ = writeln!(t, "{:<12} {}", format!("{name} rrmse"), fmt_summary(sw.rrmse));
    }
    let _ = writeln!(t, "effective cycles: {} ({:.1}%)", r.effective_cycles, 100.0 * r.effective_ratio);
    match &r.interval_mae {
        Some(m) => {
            let _ = writeln!(t, "interval MAE (ms): PR {} QRS {} QT {} over {} cycles", ms(m.pr), ms(m.qrs), ms(m.qt), m.used);
        }
        None => {
            let _ = writeln!(t, "interval MAE: no effective cycles");
        }
    }
    t
}

/// Scores the reconstruction against the test ECG and writes the report.
pub fn eval(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let set = load_cycles(cfg, out)?;
    let split = load_split(cfg, out, set.len())?;
    let rec_path = RunConfig::resolve(out, &cfg.paths.reconstruction);
    require_file(&rec_path)?;
    let r_e = read_matrix_csv(&rec_path)?;
    let test = set.select(&split.test);
    if r_e.shape() != test.e.shape() {
        return Err(
            Error::ShapeMismatch(format!("reconstruction is {:?}, test cycles are {:?}", r_e.shape(), test.e.shape())).into()
        );
    }
    let fs: Vec<f64> = (0..test.len()).map(|j| test.effective_fs(j)).collect();
    let opts = EvalOptions { align_r_peak: cfg.eval.align_r_peak };
    let report = evaluate_batch(&r_e, &test.e, &fs, &opts)?;

    let model_path = RunConfig::resolve(out, &cfg.paths.model);
    let variant = if model_path.is_file() { load_model(&model_path)?.kind() } else { "unknown" };
    write_json(
        &ReportFile {
            variant,
            train_indices: &split.train,
            test_indices: &split.test,
            align_r_peak: opts.align_r_peak,
            report: &report,
        },
        &out.join("report.json"),
    )?;
    write_per_cycle_csv(&report, &out.join("per_cycle.csv"))?;
    write_plot_csv(&test.e, &r_e, cfg.eval.plot_cycles, &out.join("plot.csv"))?;
    Ok(render_table(variant, &report))
}

fn write_plot_csv(reference: &DMatrix<f64>, rec: &DMatrix<f64>, count: usize, p: &Path) -> Result<(), CliError> {
    let mut s = String::from("cycle,sample,reference,reconstruction\n");
    for j in 0..count.min(reference.ncols()) {
        for i in 0..reference.nrows() {
            let _ = writeln!(s, "{j},{i},{:.16e},{:.16e}", reference[(i, j)], rec[(i, j)]);
        }
    }
    fs::write(p, s).map_err(|e| Error::Io { path: p.to_path_buf(), source: e }.into())
}
