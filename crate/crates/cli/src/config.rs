use std::path::{Path, PathBuf};

use adadec::decoding::DecodeConfig;
use adadec::metrics::ScoreMode;
use adadec::model::{ModelConfig, Variant};
use adadec::numerics::GradCheckConfig;
use adadec::synth::SynthConfig;
use adadec::training::TrainConfig;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    #[default]
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// JSONL inputs; `null` means `<out>/<split>.jsonl`.
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Maximum vocabulary size, reserved tokens included.
    pub vocab_size: usize,
    pub max_source_len: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            dev: None,
            test: None,
            vocab_size: 50_000,
            max_source_len: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Split decoded by `generate` and scored by `evaluate`.
    pub split: Split,
    pub mode: ScoreMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckSection {
    /// Every hidden size and the rank of the checked model.
    pub hidden: usize,
    /// Parameters start uniform in ±`init_scale`.
    pub init_scale: f64,
    pub vocab_size: usize,
    pub batch: usize,
    pub length: usize,
    #[serde(flatten)]
    pub check: GradCheckConfig,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        GradCheckSection {
            hidden: 8,
            init_scale: 0.5,
            vocab_size: 20,
            batch: 2,
            length: 5,
            check: GradCheckConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: Variant,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub gradcheck: GradCheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::AdaDec,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
            gradcheck: GradCheckSection::default(),
        }
    }
}

/// Dotted paths present in `user` but absent from `known`.
fn unknown_keys(user: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(u), Value::Object(k)) = (user, known) else {
        return;
    };
    for (key, v) in u {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match k.get(key) {
            None => out.push(path),
            Some(kv) => unknown_keys(v, kv, &path, out),
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// `key=value`, where the value is parsed as JSON if possible and taken as
/// a string otherwise.
fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s.split_once('=').with_context(|| format!("override `{s}` is not key=value"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        bail!("override `{s}` has an empty key segment");
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(root: &mut Value, path: &[String], value: Value) {
    let mut cur = root;
    for seg in &path[..path.len() - 1] {
        if !cur.get(seg).is_some_and(Value::is_object) {
            cur[seg.as_str()] = Value::Object(Default::default());
        }
        cur = cur.get_mut(seg).expect("inserted above");
    }
    cur[path[path.len() - 1].as_str()] = value;
}

impl RunConfig {
    /// Defaults, then the config file, then `overrides` in order, then
    /// `seed` (which sets both `train.seed` and `synth.seed`).
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
        let defaults = serde_json::to_value(RunConfig::default())?;
        let mut user = Value::Object(Default::default());
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            if !v.is_object() {
                bail!("config {} must be a JSON object", p.display());
            }
            merge(&mut user, v);
        }
        for o in overrides {
            let (path, value) = parse_override(o)?;
            set_path(&mut user, &path, value);
        }
        if let Some(s) = seed {
            set_path(&mut user, &["train".into(), "seed".into()], s.into());
            set_path(&mut user, &["synth".into(), "seed".into()], s.into());
        }
        let mut unknown = Vec::new();
        unknown_keys(&user, &defaults, "", &mut unknown);
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        let mut merged = defaults;
        merge(&mut merged, user);
        let config: RunConfig = serde_json::from_value(merged).context("invalid config value")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |r: adadec::Result<()>| {
            if let Err(e) = r {
                problems.push(e.to_string());
            }
        };
        check(self.model.validate());
        check(self.train.validate());
        check(self.decode.validate());
        if self.data.vocab_size < 5 {
            problems.push("data.vocab_size must be at least 5".into());
        }
        if self.gradcheck.vocab_size < 5 {
            problems.push("gradcheck.vocab_size must be at least 5".into());
        }
        if !(self.gradcheck.init_scale > 0.0) {
            problems.push("gradcheck.init_scale must be positive".into());
        }
        for (name, v) in [("hidden", self.gradcheck.hidden), ("batch", self.gradcheck.batch), ("length", self.gradcheck.length)] {
            if v == 0 {
                problems.push(format!("gradcheck.{name} must be positive"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            bail!("config validation failed: {}", problems.join("; "))
        }
    }

    pub fn data_path(&self, out: &Path, split: Split) -> PathBuf {
        let p = match split {
            Split::Train => &self.data.train,
            Split::Dev => &self.data.dev,
            Split::Test => &self.data.test,
        };
        p.clone().unwrap_or_else(|| out.join(format!("{}.jsonl", split.name())))
    }
}
