//! Run configuration: one JSON document shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xdjdl_core::preprocess::PreprocessConfig;
use xdjdl_core::synthetic::{EcgTemplateParams, PlantedSpec};
use xdjdl_core::HyperParams;

/// A configuration problem, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Paired ECG/PPG recordings with planted fiducials.
    #[default]
    Records,
    /// Cycle matrices drawn from a planted dictionary model.
    Planted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub records: usize,
    pub duration: f64,
    pub fs: f64,
    /// Heart-rate increment between consecutive records, bpm.
    pub heart_rate_step: f64,
    pub template: EcgTemplateParams,
    pub planted: PlantedSpec,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kind: SynthKind::Records,
            records: 4,
            duration: 60.0,
            fs: 125.0,
            heart_rate_step: 10.0,
            template: EcgTemplateParams { hr_jitter: 0.05, noise_std: 0.02, ..Default::default() },
            planted: PlantedSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessSection {
    #[serde(flatten)]
    pub core: PreprocessConfig,
    /// Sampling rate for signal files without a time column.
    pub default_fs: f64,
    /// Optional class id per record, in file-name order.
    pub record_labels: Option<Vec<usize>>,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection { core: PreprocessConfig::default(), default_fs: 125.0, record_labels: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Xdjdl,
    LcXdjdl,
    Dct,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSection {
    pub hyper: HyperParams,
    pub variant: Variant,
    /// Number of classes for `lc_xdjdl`; defaults to `max label + 1`.
    pub class_count: Option<usize>,
    pub dct_ridge: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { hyper: HyperParams::desk(), variant: Variant::Xdjdl, class_count: None, dct_ridge: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_ratio: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { train_ratio: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Compensate the R-peak offset of each reconstruction before scoring.
    pub align_r_peak: bool,
    /// Number of test cycles written to the plot CSV.
    pub plot_cycles: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { align_r_peak: false, plot_cycles: 3 }
    }
}

/// Input locations; relative paths resolve against the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub records: PathBuf,
    pub cycles: PathBuf,
    pub model: PathBuf,
    pub reconstruction: PathBuf,
    pub split: PathBuf,
    /// Optional `cycle_index,class_id` file overriding labels in the cycle set.
    pub labels: Option<PathBuf>,
}

impl Default for PathSection {
    fn default() -> Self {
        PathSection {
            records: "records".into(),
            cycles: "cycles.json".into(),
            model: "model.xdjd".into(),
            reconstruction: "reconstruction.csv".into(),
            split: "split.json".into(),
            labels: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub preprocess: PreprocessSection,
    pub train: TrainSection,
    pub split: SplitSection,
    pub eval: EvalSection,
    pub paths: PathSection,
}

/// Recursively overlays `given` onto `base`; objects merge, anything else replaces.
fn merge(base: &mut Value, given: &Value) {
    match (base, given) {
        (Value::Object(b), Value::Object(g)) => {
            for (k, v) in g {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, g) => *b = g.clone(),
    }
}

/// Deserialises a section, keeping defaults for every field not given,
/// including fields of nested objects.
fn section<T: Serialize + for<'de> Deserialize<'de> + Default>(doc: &Value, name: &str) -> Result<T, ConfigError> {
    let Some(given) = doc.get(name) else {
        return Ok(T::default());
    };
    let mut value = serde_json::to_value(T::default()).expect("serialisable");
    merge(&mut value, given);
    serde_json::from_value(value).map_err(|e| ConfigError(format!("{name}: {e}")))
}

/// Train section: fields not given fall back to the desk-scale defaults.
fn train_section(doc: &Value) -> Result<TrainSection, ConfigError> {
    let defaults = TrainSection::default();
    let Some(given) = doc.get("train") else {
        return Ok(defaults);
    };
    let given = given.as_object().ok_or_else(|| ConfigError("train: expected an object".into()))?;
    let mut hyper = serde_json::to_value(&defaults.hyper).expect("serialisable");
    let hyper_obj = hyper.as_object_mut().expect("object");
    let mut out = defaults;
    for (key, value) in given {
        let bad = |e: serde_json::Error| ConfigError(format!("train.{key}: {e}"));
        match key.as_str() {
            "variant" => out.variant = serde_json::from_value(value.clone()).map_err(bad)?,
            "class_count" => out.class_count = serde_json::from_value(value.clone()).map_err(bad)?,
            "dct_ridge" => out.dct_ridge = serde_json::from_value(value.clone()).map_err(bad)?,
            k if hyper_obj.contains_key(k) => {
                hyper_obj.insert(k.to_string(), value.clone());
            }
            k => return Err(ConfigError(format!("train: unknown field `{k}`"))),
        }
    }
    out.hyper = serde_json::from_value(hyper).map_err(|e| ConfigError(format!("train: {e}")))?;
    Ok(out)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| ConfigError(format!("config is not valid JSON: {e}")))?;
        let obj = doc.as_object().ok_or_else(|| ConfigError("config must be a JSON object".into()))?;
        const SECTIONS: [&str; 6] = ["synth", "preprocess", "train", "split", "eval", "paths"];
        if let Some(k) = obj.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(ConfigError(format!("unknown config section `{k}`")));
        }
        Ok(RunConfig {
            synth: section(&doc, "synth")?,
            preprocess: section(&doc, "preprocess")?,
            train: train_section(&doc)?,
            split: section(&doc, "split")?,
            eval: section(&doc, "eval")?,
            paths: section(&doc, "paths")?,
        })
    }

    /// Applies `--seed` to every seeded stage.
    pub fn override_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.synth.template.seed = seed;
        self.synth.planted.seed = seed;
        self.train.hyper.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.synth;
        if s.records == 0 {
            return Err(ConfigError("synth.records must be positive".into()));
        }
        if !(s.fs > 0.0) || !s.fs.is_finite() {
            return Err(ConfigError("synth.fs must be positive".into()));
        }
        if !(s.template.heart_rate > 0.0) {
            return Err(ConfigError(format!("synth.template.heart_rate must be positive, got {}", s.template.heart_rate)));
        }
        let last_hr = s.template.heart_rate + s.heart_rate_step * (s.records as f64 - 1.0);
        if !(last_hr > 0.0) {
            return Err(ConfigError("synth.heart_rate_step drives a record's heart_rate to <= 0".into()));
        }
        s.template.validate().map_err(|e| ConfigError(format!("synth.template: {e}")))?;
        self.train.hyper.validate().map_err(|e| ConfigError(format!("train: {e}")))?;
        let r = self.split.train_ratio;
        if !(r > 0.0 && r < 1.0) {
            return Err(ConfigError(format!("split.train_ratio must be in (0, 1), got {r}")));
        }
        if self.preprocess.core.d < 2 {
            return Err(ConfigError("preprocess.d must be at least 2".into()));
        }
        if !(self.preprocess.core.smoothing > 0.0) {
            return Err(ConfigError("preprocess.smoothing must be positive".into()));
        }
        if !(self.train.dct_ridge >= 0.0) {
            return Err(ConfigError("train.dct_ridge must be non-negative".into()));
        }
        Ok(())
    }

    pub fn resolve(out: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            out.join(p)
        }
    }
}
