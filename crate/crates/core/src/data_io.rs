//! Persistence: signal CSV, cycle sets (CSV + JSON sidecar), label files,
//! evaluation reports and the binary model container.
//!
//! Model container layout (all integers little-endian):
//!
//! ```text
//! "XDJD" | version u16 | entry count u32 | metadata length u32
//! entries: name_len u16 | name | rows u64 | cols u64 | offset u64
//! metadata: UTF-8 JSON
//! payload: row-major f64 matrices, offsets relative to payload start
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dict_learning::{HyperParams, IterationRecord, LcXdjdlModel, XdjdlModel};
use crate::error::{Error, Result};
use crate::evaluate::EvalReport;
use crate::inference::DctBaselineModel;
use crate::preprocess::{CyclePairSet, RawRecord, SegmentationMode};
use crate::sparse_coding::Dictionary;

pub const MODEL_MAGIC: &[u8; 4] = b"XDJD";
pub const MODEL_VERSION: u16 = 1;
pub const CYCLES_VERSION: u32 = 1;

/// Any model the container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Xdjdl(XdjdlModel),
    LcXdjdl(LcXdjdlModel),
    Dct(DctBaselineModel),
}

impl StoredModel {
    pub fn kind(&self) -> &'static str {
        match self {
            StoredModel::Xdjdl(_) => "xdjdl",
            StoredModel::LcXdjdl(_) => "lc_xdjdl",
            StoredModel::Dct(_) => "dct",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    hyper: Option<HyperParams>,
    #[serde(default)]
    trace: Vec<f64>,
    #[serde(default)]
    iterations: Vec<IterationRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    class_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ones_per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ridge: Option<f64>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Serialises a model into container bytes.
pub fn encode_model(model: &StoredModel) -> Result<Vec<u8>> {
    let mut meta = ModelMeta {
        kind: model.kind().into(),
        hyper: None,
        trace: vec![],
        iterations: vec![],
        class_count: None,
        ones_per_class: None,
        ridge: None,
    };
    let mut mats: Vec<(&str, &DMatrix<f64>)> = Vec::new();
    let base_meta = |b: &'_ XdjdlModel, meta: &mut ModelMeta| {
        meta.hyper = Some(b.hyper.clone());
        meta.trace = b.trace.clone();
        meta.iterations = b.iterations.clone();
    };
    match model {
        StoredModel::Xdjdl(m) => {
            base_meta(m, &mut meta);
            mats.extend([("d_e", m.d_e.atoms()), ("d_p", &m.d_p), ("w", &m.w)]);
        }
        StoredModel::LcXdjdl(m) => {
            base_meta(&m.base, &mut meta);
            meta.class_count = Some(m.class_count);
            meta.ones_per_class = Some(m.ones_per_class);
            mats.extend([("d_e", m.base.d_e.atoms()), ("d_p", &m.base.d_p), ("w", &m.base.w), ("h", &m.h)]);
        }
        StoredModel::Dct(m) => {
            meta.ridge = Some(m.ridge);
            mats.push(("w_dct", &m.w_dct));
        }
    }
    let json = serde_json::to_vec(&meta).map_err(|e| Error::InvalidParams(format!("model metadata: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(mats.len() as u32).to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, m) in &mats {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += (m.len() * 8) as u64;
    }
    out.extend_from_slice(&json);
    for (_, m) in &mats {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.extend_from_slice(&m[(i, j)].to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptEntryTable(format!("file truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

/// Parses container bytes.
pub fn decode_model(bytes: &[u8]) -> Result<StoredModel> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::BadMagic);
    }
    let mut c = Cursor { buf: bytes, pos: 4 };
    let version = c.u16("version")?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = c.u32("entry count")? as usize;
    let json_len = c.u32("metadata length")? as usize;
    let mut entries = Vec::with_capacity(count.min(64));
    for k in 0..count {
        let name_len = c.u16("entry name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "entry name")?)
            .map_err(|_| Error::CorruptEntryTable(format!("entry {k} name is not UTF-8")))?
            .to_string();
        let to_usize = |v: u64, what: &str| {
            usize::try_from(v).map_err(|_| Error::CorruptEntryTable(format!("entry {name}: {what} too large")))
        };
        let rows = to_usize(c.u64("entry rows")?, "rows")?;
        let cols = to_usize(c.u64("entry cols")?, "cols")?;
        let offset = to_usize(c.u64("entry offset")?, "offset")?;
        entries.push(Entry { name, rows, cols, offset });
    }
    let json = c.take(json_len, "metadata")?;
    let payload = &bytes[c.pos..];

    // entries must tile the payload exactly, in order
    let mut expected = 0usize;
    for e in &entries {
        let size = e
            .rows
            .checked_mul(e.cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::CorruptEntryTable(format!("entry {} size overflows", e.name)))?;
        if e.offset != expected {
            return Err(Error::CorruptEntryTable(format!("entry {} at offset {} (expected {expected})", e.name, e.offset)));
        }
        expected += size;
    }
    if expected != payload.len() {
        return Err(Error::CorruptEntryTable(format!("payload is {} bytes, entries declare {expected}", payload.len())));
    }
    let meta: ModelMeta = serde_json::from_slice(json).map_err(|e| Error::CorruptEntryTable(format!("metadata: {e}")))?;

    let matrix = |name: &str| -> Result<DMatrix<f64>> {
        let e =
            entries.iter().find(|e| e.name == name).ok_or_else(|| Error::CorruptEntryTable(format!("missing matrix {name}")))?;
        let data = &payload[e.offset..e.offset + e.rows * e.cols * 8];
        let mut it = data.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
        let mut m = DMatrix::zeros(e.rows, e.cols);
        for i in 0..e.rows {
            for j in 0..e.cols {
                m[(i, j)] = it.next().expect("size checked");
            }
        }
        Ok(m)
    };
    let missing = |what: &str| Error::CorruptEntryTable(format!("metadata lacks {what}"));
    let base = |meta: &ModelMeta| -> Result<XdjdlModel> {
        let d_e = Dictionary::new(matrix("d_e")?).map_err(|e| Error::CorruptEntryTable(format!("d_e: {e}")))?;
        Ok(XdjdlModel {
            d_e,
            d_p: matrix("d_p")?,
            w: matrix("w")?,
            hyper: meta.hyper.clone().ok_or_else(|| missing("hyperparameters"))?,
            trace: meta.trace.clone(),
            iterations: meta.iterations.clone(),
        })
    };
    match meta.kind.as_str() {
        "xdjdl" => Ok(StoredModel::Xdjdl(base(&meta)?)),
        "lc_xdjdl" => Ok(StoredModel::LcXdjdl(LcXdjdlModel {
            base: base(&meta)?,
            h: matrix("h")?,
            class_count: meta.class_count.ok_or_else(|| missing("class_count"))?,
            ones_per_class: meta.ones_per_class.ok_or_else(|| missing("ones_per_class"))?,
        })),
        "dct" => {
            Ok(StoredModel::Dct(DctBaselineModel { w_dct: matrix("w_dct")?, ridge: meta.ridge.ok_or_else(|| missing("ridge"))? }))
        }
        other => Err(Error::CorruptEntryTable(format!("unknown model kind {other:?}"))),
    }
}

pub fn save_model(model: &StoredModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<StoredModel> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("{s:?}: {e}") })
}

fn csv_error(e: csv::Error, path: &Path) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { line, msg: format!("{other:?}") },
    }
}

fn open_csv(path: &Path, headers: bool) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(headers).flexible(true).trim(csv::Trim::All).from_reader(f))
}

/// Reads a paired-signal CSV with header `t,ppg,ecg` or `ppg,ecg`.
///
/// With a `t` column (seconds) the sampling rate is inferred from its span;
/// otherwise `default_fs` is used.
pub fn read_signals(path: &Path, default_fs: f64) -> Result<RawRecord> {
    let mut rdr = open_csv(path, true)?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_error(e, path))?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let has_t = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["t", "ppg", "ecg"] => true,
        ["ppg", "ecg"] => false,
        _ => return Err(Error::Parse { line: 1, msg: format!("expected header t,ppg,ecg or ppg,ecg, got {header:?}") }),
    };
    let (mut t, mut ppg, mut ecg) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e, path))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(Error::Parse { line, msg: format!("expected {} fields, got {}", header.len(), rec.len()) });
        }
        let off = usize::from(has_t);
        if has_t {
            t.push(parse_f64(&rec[0], line)?);
        }
        ppg.push(parse_f64(&rec[off], line)?);
        ecg.push(parse_f64(&rec[off + 1], line)?);
    }
    let fs = if has_t && t.len() >= 2 {
        let span = t[t.len() - 1] - t[0];
        if !(span > 0.0) {
            return Err(Error::Parse { line: 2, msg: "time column must increase".into() });
        }
        (t.len() - 1) as f64 / span
    } else {
        default_fs
    };
    RawRecord::new(ppg, ecg, fs)
}

/// Writes a paired-signal CSV, with a time column when `with_time` is set.
pub fn write_signals(record: &RawRecord, path: &Path, with_time: bool) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    if with_time {
        writeln!(w, "t,ppg,ecg").map_err(io)?;
    } else {
        writeln!(w, "ppg,ecg").map_err(io)?;
    }
    for i in 0..record.len() {
        if with_time {
            write!(w, "{:.16e},", i as f64 / record.fs).map_err(io)?;
        }
        writeln!(w, "{:.16e},{:.16e}", record.ppg[i], record.ecg[i]).map_err(io)?;
    }
    finish(w, path)
}

/// Writes a matrix as headerless CSV, one matrix row per line, 17
/// significant digits.
pub fn write_matrix_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                w.write_all(b",").map_err(io)?;
            }
            write!(w, "{:.16e}", m[(i, j)]).map_err(io)?;
        }
        w.write_all(b"\n").map_err(io)?;
    }
    finish(w, path)
}

/// Reads a headerless numeric CSV. Every line must have the same number of
/// fields.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = open_csv(path, false)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e, path))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let row = rec.iter().map(|s| parse_f64(s, line)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: line {line} has {} columns, expected {}",
                    path.display(),
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// JSON sidecar of a cycle set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSidecar {
    pub version: u32,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub fs: f64,
    pub mode: SegmentationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    pub record_ids: Vec<usize>,
    pub raw_lengths: Vec<usize>,
    pub ppg_file: String,
    pub ecg_file: String,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

/// Writes a cycle set as `<stem>.ppg.csv`, `<stem>.ecg.csv` (d rows x N
/// columns) plus the JSON sidecar at `path`.
pub fn write_cycles(set: &CyclePairSet, path: &Path) -> Result<()> {
    set.check_shapes()?;
    let (pp, ep) = (sibling(path, "ppg"), sibling(path, "ecg"));
    write_matrix_csv(&set.p, &pp)?;
    write_matrix_csv(&set.e, &ep)?;
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let side = CycleSidecar {
        version: CYCLES_VERSION,
        d: set.d(),
        n: set.len(),
        fs: set.fs,
        mode: set.mode,
        labels: set.labels.clone(),
        record_ids: set.record_ids.clone(),
        raw_lengths: set.raw_lengths.clone(),
        ppg_file: name(&pp),
        ecg_file: name(&ep),
    };
    write_json(&side, path)
}

/// Reads a cycle set written by [`write_cycles`].
pub fn read_cycles(path: &Path) -> Result<CyclePairSet> {
    let side: CycleSidecar = read_json(path)?;
    if side.version != CYCLES_VERSION {
        return Err(Error::ShapeMismatch(format!("unsupported cycle set version {}", side.version)));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let p = read_matrix_csv(&dir.join(&side.ppg_file))?;
    let e = read_matrix_csv(&dir.join(&side.ecg_file))?;
    for (name, m) in [("ppg", &p), ("ecg", &e)] {
        if m.nrows() != side.d || m.ncols() != side.n {
            return Err(Error::ShapeMismatch(format!(
                "{name} matrix is {}x{}, sidecar declares d={} N={}",
                m.nrows(),
                m.ncols(),
                side.d,
                side.n
            )));
        }
    }
    let set = CyclePairSet {
        p,
        e,
        labels: side.labels,
        record_ids: side.record_ids,
        raw_lengths: side.raw_lengths,
        fs: side.fs,
        mode: side.mode,
    };
    set.check_shapes()?;
    Ok(set)
}

/// Writes `cycle_index,class_id` rows.
pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "cycle_index,class_id").map_err(io)?;
    for (i, c) in labels.iter().enumerate() {
        writeln!(w, "{i},{c}").map_err(io)?;
    }
    finish(w, path)
}

/// Reads a `cycle_index,class_id` file covering indices `0..n` exactly once.
/// Class ids must be below `class_count`.
pub fn read_labels(path: &Path, n: usize, class_count: usize) -> Result<Vec<usize>> {
    let mut rdr = open_csv(path, true)?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_error(e, path))?.iter().map(str::to_string).collect();
    if header != ["cycle_index", "class_id"] {
        return Err(Error::Parse { line: 1, msg: format!("expected header cycle_index,class_id, got {header:?}") });
    }
    let mut labels: Vec<Option<usize>> = vec![None; n];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e, path))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |k: usize| -> Result<usize> {
            let s = rec.get(k).ok_or_else(|| Error::Parse { line, msg: "missing field".into() })?;
            s.parse::<usize>().map_err(|e| Error::Parse { line, msg: format!("{s:?}: {e}") })
        };
        let (i, c) = (field(0)?, field(1)?);
        if i >= n {
            return Err(Error::Parse { line, msg: format!("cycle index {i} out of range for {n} cycles") });
        }
        if c >= class_count {
            return Err(Error::LabelOutOfRange { label: c, classes: class_count });
        }
        if labels[i].replace(c).is_some() {
            return Err(Error::Parse { line, msg: format!("duplicate cycle index {i}") });
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::ShapeMismatch(format!("no label for cycle {i}"))))
        .collect()
}

/// Pretty-printed JSON.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })
}

pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    write_json(report, path)
}

/// One row per cycle: index, ρ, rRMSE, effective flag and recovered/reference
/// intervals in seconds. Missing values are empty fields.
pub fn write_per_cycle_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "index,rho,rrmse,effective,pr_rec,pr_ref,qrs_rec,qrs_ref,qt_rec,qt_ref").map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    for c in &report.per_cycle {
        let (a, b) = (c.intervals_rec, c.intervals_ref);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            c.index,
            opt(c.rho),
            opt(c.rrmse),
            u8::from(c.effective),
            opt(a.pr),
            opt(b.pr),
            opt(a.qrs),
            opt(b.qrs),
            opt(a.qt),
            opt(b.qt)
        )
        .map_err(io)?;
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> StoredModel {
        let d_e = Dictionary::from_unnormalized(DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 + 0.5)).unwrap();
        StoredModel::Xdjdl(XdjdlModel {
            d_e,
            d_p: DMatrix::from_fn(4, 2, |i, j| 0.1 * (i + j) as f64 - 1.0 / 3.0),
            w: DMatrix::from_fn(3, 2, |i, j| (i as f64).sin() + j as f64 * std::f64::consts::E),
            hyper: HyperParams { k_e: 3, k_p: 2, t_e: 1, t_p: 1, alpha: 0.1 + 0.2, ..HyperParams::desk() },
            trace: vec![1.0 / 7.0, 1e-300, 12345.678],
            iterations: vec![],
        })
    }

    #[test]
    fn container_round_trip() {
        let m = small_model();
        assert_eq!(decode_model(&encode_model(&m).unwrap()).unwrap(), m);
        let dct = StoredModel::Dct(DctBaselineModel { w_dct: DMatrix::identity(3, 3) * 0.3, ridge: 1e-3 });
        assert_eq!(decode_model(&encode_model(&dct).unwrap()).unwrap(), dct);
    }

    #[test]
    fn container_errors() {
        let bytes = encode_model(&small_model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(matches!(decode_model(&bad), Err(Error::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_model(&v2), Err(Error::UnsupportedVersion(2))));
        for cut in [6, 12, 20, 40, bytes.len() - 1] {
            assert!(matches!(decode_model(&bytes[..cut]), Err(Error::CorruptEntryTable(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_model(&extra), Err(Error::CorruptEntryTable(_))));
        assert!(matches!(decode_model(b"XD"), Err(Error::BadMagic)));
    }
}
