use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::clips::SamplerConfig;
use crate::error::{Error, Result};
use crate::eval::{AlignmentMode, SegmentConfig};
use crate::loss::LossConfig;
use crate::model::ModelConfig;

use super::synth::RenderConfig;
use super::write_string_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub stride: usize,
    /// Clip pairs per batch.
    pub batch_size: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            stride: 1,
            batch_size: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { steps: 200 }
    }
}

/// Sequences to train and test on. Trajectories come from
/// `<poses_dir>/<sequence>.txt` when a directory is given, otherwise from
/// synthetic shapes cycling through line, circle and figure-eight. Frames are
/// always rendered synthetically along the trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poses_dir: Option<PathBuf>,
    pub train_sequences: Vec<String>,
    pub test_sequences: Vec<String>,
    pub frames_per_sequence: usize,
    pub step: f64,
    pub curvature: f64,
    pub noise_std: f64,
    pub render: RenderConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        let seqs = |s: &[&str]| s.iter().map(|v| v.to_string()).collect();
        Self {
            poses_dir: None,
            train_sequences: seqs(&["00", "02", "08", "09"]),
            test_sequences: seqs(&["01", "03", "04", "05", "06", "07", "10"]),
            frames_per_sequence: 19,
            step: 0.5,
            curvature: 0.05,
            noise_std: 0.02,
            render: RenderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub alignment: AlignmentMode,
    pub lengths: Vec<u32>,
    pub step_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let s = SegmentConfig::default();
        Self {
            alignment: AlignmentMode::Similarity7Dof,
            lengths: s.lengths,
            step_size: s.step_size,
        }
    }
}

impl EvalSection {
    pub fn segments(&self) -> SegmentConfig {
        SegmentConfig {
            lengths: self.lengths.clone(),
            step_size: self.step_size,
        }
    }
}

/// Everything a training run needs. Every key is optional; unknown keys are
/// rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub sampler: SamplerSection,
    pub loss: LossConfig,
    pub optim: AdamConfig,
    pub train: TrainSection,
    pub data: DataConfig,
    pub eval: EvalSection,
}

/// Largest seed a config file can hold (TOML integers are signed 64-bit).
pub const MAX_SEED: u64 = i64::MAX as u64;

fn config_error(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

impl RunConfig {
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_frames: self.model.n_frames,
            stride: self.sampler.stride,
            batch_size: self.sampler.batch_size,
            shuffle_seed: self.seed,
        }
    }

    /// `<poses_dir>/<sequence>.txt`, if a directory is configured.
    pub fn pose_file(&self, sequence: &str) -> Option<PathBuf> {
        self.data.poses_dir.as_ref().map(|d| d.join(format!("{sequence}.txt")))
    }

    /// Value checks, including that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        if self.seed > MAX_SEED {
            return Err(config_error(
                "seed",
                format!("must be at most {MAX_SEED}, got {}", self.seed),
            ));
        }
        self.model
            .validate()
            .map_err(|e| config_error("model", e.to_string()))?;
        if !(self.loss.alpha.is_finite() && self.loss.alpha >= 0.0) {
            return Err(config_error(
                "loss.alpha",
                format!("must be finite and ≥ 0, got {}", self.loss.alpha),
            ));
        }
        self.optim
            .validate()
            .map_err(|e| config_error("optim.lr", e.to_string()))?;
        self.sampler_config()
            .validate()
            .map_err(|e| config_error("sampler", e.to_string()))?;
        if self.train.steps == 0 {
            return Err(config_error("train.steps", "must be positive"));
        }
        self.eval
            .segments()
            .validate()
            .map_err(|e| config_error("eval", e.to_string()))?;
        self.data
            .render
            .validate()
            .map_err(|e| config_error("data.render", e.to_string()))?;
        let d = &self.data;
        if d.train_sequences.is_empty() {
            return Err(config_error("data.train_sequences", "needs at least one sequence"));
        }
        let train: BTreeSet<&String> = d.train_sequences.iter().collect();
        if train.len() != d.train_sequences.len() {
            return Err(config_error("data.train_sequences", "lists a sequence twice"));
        }
        if let Some(s) = d.test_sequences.iter().find(|s| train.contains(s)) {
            return Err(config_error(
                "data.test_sequences",
                format!("sequence {s} is also a training sequence"),
            ));
        }
        if d.frames_per_sequence < self.model.n_frames + 1 {
            return Err(config_error(
                "data.frames_per_sequence",
                format!("must hold at least one clip pair ({} frames)", self.model.n_frames + 1),
            ));
        }
        if !(d.step > 0.0 && d.step.is_finite()) {
            return Err(config_error("data.step", "must be > 0"));
        }
        if !(d.curvature.is_finite() && d.curvature != 0.0) {
            return Err(config_error("data.curvature", "must be finite and non-zero"));
        }
        if !(d.noise_std.is_finite() && d.noise_std >= 0.0) {
            return Err(config_error("data.noise_std", "must be ≥ 0"));
        }
        if let Some(dir) = &d.poses_dir {
            if !dir.is_dir() {
                return Err(config_error(
                    "data.poses_dir",
                    format!("{} is not a directory", dir.display()),
                ));
            }
            for s in d.train_sequences.iter().chain(&d.test_sequences) {
                let f = self.pose_file(s).expect("directory set");
                if !f.is_file() {
                    return Err(config_error(
                        "data.poses_dir",
                        format!("missing pose file {}", f.display()),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Dotted key of the table header or assignment that contains byte `pos`.
fn key_at(text: &str, pos: usize, field: Option<&str>) -> String {
    let before = &text[..pos.min(text.len())];
    let section = before
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            l.strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .map(|s| s.trim().to_string())
        })
        .next_back();
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let line_key = line.split('=').next().unwrap_or("").trim();
    let local = match field {
        Some(f) if line_key == f || line_key.ends_with(&format!(".{f}")) => line_key.to_string(),
        Some(f) => f.to_string(),
        None => line_key.to_string(),
    };
    let local = if local.starts_with('[') { String::new() } else { local };
    match (section, local.is_empty()) {
        (Some(s), true) => s,
        (Some(s), false) if !local.contains('.') || !local.starts_with(&format!("{s}.")) => format!("{s}.{local}"),
        (_, _) => local,
    }
}

/// Parses config text, then validates it.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let field = msg
            .strip_prefix("unknown field `")
            .and_then(|r| r.split('`').next())
            .map(str::to_string);
        let key = match e.span() {
            Some(span) => key_at(text, span.start, field.as_deref()),
            None => field.unwrap_or_default(),
        };
        config_error(&key, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a config file. A relative `data.poses_dir` is taken
/// relative to the file's directory.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = crate::error::read_text(path)?;
    let mut raw: RunConfig = parse_unvalidated(&text)?;
    if let Some(dir) = &raw.data.poses_dir {
        if dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            raw.data.poses_dir = Some(base.join(dir));
        }
    }
    raw.validate()?;
    Ok(raw)
}

fn parse_unvalidated(text: &str) -> Result<RunConfig> {
    match parse_config(text) {
        Ok(c) => Ok(c),
        // Path checks must wait until relative paths are resolved.
        Err(Error::Config { key, .. }) if key == "data.poses_dir" => {
            Ok(toml::from_str(text).expect("already parsed once"))
        }
        Err(e) => Err(e),
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

/// One `section.key = value` line per setting.
pub fn format_config(cfg: &RunConfig) -> Result<String> {
    let value = toml::Value::try_from(cfg).map_err(|e| config_error("", e.to_string()))?;
    let mut lines = Vec::new();
    flatten("", &value, &mut lines);
    Ok(lines.join("\n") + "\n")
}

pub fn write_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    write_string_atomic(path, &format_config(cfg)?)
}
