//! `key = value` run configuration covering training, evaluation and survey settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::metrics::KidConfig;
use crate::trainer::TrainConfig;

/// Name of the resolved configuration echoed into every output directory.
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved";

/// Settings outside [`TrainConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub out_dir: Option<PathBuf>,
    /// Generated images scored against the real set after training.
    pub eval_samples: usize,
    /// Images in the sample grid (8 per row).
    pub grid_images: usize,
    pub sample_seed: u64,
    pub kid_degree: u32,
    pub kid_offset: f64,
    pub kid_block: Option<usize>,
    pub kid_blocks: usize,
    pub survey_responses: Option<PathBuf>,
    pub allow_partial: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        let kid = KidConfig::default();
        RunSettings {
            out_dir: None,
            eval_samples: 200,
            grid_images: 64,
            sample_seed: 0,
            kid_degree: kid.degree,
            kid_offset: kid.offset,
            kid_block: kid.block_size,
            kid_blocks: kid.num_blocks,
            survey_responses: None,
            allow_partial: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub run: RunSettings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Text,
    FloatPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    Train,
    Run,
}

/// Every accepted key with its section and type. Keys marked optional may be
/// left unset.
const SCHEMA: &[(&str, Section, Kind, bool)] = &[
    ("data_dir", Section::Train, Kind::Text, true),
    ("resolution", Section::Train, Kind::Int, false),
    ("dim_z", Section::Train, Kind::Int, false),
    ("dim_w", Section::Train, Kind::Int, false),
    ("mapping_layers", Section::Train, Kind::Int, false),
    ("channel_base", Section::Train, Kind::Int, false),
    ("channel_max", Section::Train, Kind::Int, false),
    ("batch_size", Section::Train, Kind::Int, false),
    ("learning_rate_g", Section::Train, Kind::Float, false),
    ("learning_rate_d", Section::Train, Kind::Float, false),
    ("adam_betas", Section::Train, Kind::FloatPair, false),
    ("adam_eps", Section::Train, Kind::Float, false),
    ("total_iterations", Section::Train, Kind::Int, false),
    ("checkpoint_interval", Section::Train, Kind::Int, false),
    ("keep_checkpoints", Section::Train, Kind::Bool, false),
    ("fid_monitor_interval", Section::Train, Kind::Int, false),
    ("fid_monitor_samples", Section::Train, Kind::Int, false),
    ("extractor", Section::Train, Kind::Text, false),
    ("seed", Section::Train, Kind::Int, false),
    ("augment_flip", Section::Train, Kind::Bool, false),
    ("r1_gamma", Section::Train, Kind::Float, false),
    ("r1_interval", Section::Train, Kind::Int, false),
    ("stop_patience", Section::Train, Kind::Int, false),
    ("stop_min_delta", Section::Train, Kind::Float, false),
    ("out_dir", Section::Run, Kind::Text, true),
    ("eval_samples", Section::Run, Kind::Int, false),
    ("grid_images", Section::Run, Kind::Int, false),
    ("sample_seed", Section::Run, Kind::Int, false),
    ("kid_degree", Section::Run, Kind::Int, false),
    ("kid_offset", Section::Run, Kind::Float, false),
    ("kid_block", Section::Run, Kind::Int, true),
    ("kid_blocks", Section::Run, Kind::Int, false),
    ("survey_responses", Section::Run, Kind::Text, true),
    ("allow_partial", Section::Run, Kind::Bool, false),
];

fn parse_value(key: &str, kind: Kind, raw: &str) -> std::result::Result<Value, String> {
    let bad = |what: &str| format!("{key}: expected {what}, got {raw:?}");
    let float = |s: &str| -> std::result::Result<Value, String> {
        let v: f64 = s.trim().parse().map_err(|_| bad("a number"))?;
        if !v.is_finite() {
            return Err(bad("a finite number"));
        }
        Ok(Value::from(v))
    };
    match kind {
        Kind::Int => raw.parse::<u64>().map(Value::from).map_err(|_| bad("a non-negative integer")),
        Kind::Float => float(raw),
        Kind::Bool => match raw {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(bad("true or false")),
        },
        Kind::Text => {
            let unquoted = raw
                .strip_prefix('"')
                .and_then(|s| s.strip_suffix('"'))
                .unwrap_or(raw);
            Ok(Value::from(unquoted))
        }
        Kind::FloatPair => {
            let parts: Vec<&str> = raw.split(',').collect();
            if parts.len() != 2 {
                return Err(bad("two comma-separated numbers"));
            }
            Ok(Value::Array(vec![float(parts[0])?, float(parts[1])?]))
        }
    }
}

fn format_value(kind: Kind, v: &Value) -> String {
    match (kind, v) {
        (Kind::FloatPair, Value::Array(a)) => a.iter().map(|x| format_value(Kind::Float, x)).collect::<Vec<_>>().join(", "),
        (Kind::Float, Value::Number(n)) => {
            let f = n.as_f64().unwrap_or(f64::NAN);
            if f.fract() == 0.0 && f.abs() < 1e15 {
                format!("{f:.1}")
            } else {
                format!("{f:?}")
            }
        }
        (Kind::Text, Value::String(s)) => s.clone(),
        (_, other) => other.to_string(),
    }
}

impl RunConfig {
    fn to_maps(&self) -> Result<(Map<String, Value>, Map<String, Value>)> {
        let obj = |v: Value| match v {
            Value::Object(m) => Ok(m),
            _ => Err(Error::Format("configuration did not serialize to an object".into())),
        };
        let to_value = |r: serde_json::Result<Value>| r.map_err(|e| Error::Format(e.to_string()));
        Ok((
            obj(to_value(serde_json::to_value(&self.train))?)?,
            obj(to_value(serde_json::to_value(&self.run))?)?,
        ))
    }

    fn from_maps(train: Map<String, Value>, run: Map<String, Value>) -> Result<Self> {
        let cfg = RunConfig {
            train: serde_json::from_value(Value::Object(train)).map_err(|e| Error::Config(e.to_string()))?,
            run: serde_json::from_value(Value::Object(run)).map_err(|e| Error::Config(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key = value` assignments on top of `self`.
    pub fn with_overrides<'a>(&self, assignments: impl IntoIterator<Item = (usize, &'a str, &'a str)>) -> Result<Self> {
        let (mut train, mut run) = self.to_maps()?;
        for (line, key, raw) in assignments {
            let &(_, section, kind, _) = SCHEMA
                .iter()
                .find(|s| s.0 == key)
                .ok_or_else(|| Error::Config(format!("{}unknown key {key:?}", origin(line))))?;
            let value = parse_value(key, kind, raw).map_err(|e| Error::Config(format!("{}{e}", origin(line))))?;
            match section {
                Section::Train => train.insert(key.to_string(), value),
                Section::Run => run.insert(key.to_string(), value),
            };
        }
        Self::from_maps(train, run)
    }

    /// Parses a configuration file body; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut assignments = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            assignments.push((i + 1, key.trim(), value.trim()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (line, key, _) in &assignments {
            if !seen.insert(*key) {
                return Err(Error::Config(format!("line {line}: {key} set twice")));
            }
        }
        RunConfig::default().with_overrides(assignments)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` strings given on the command line. They carry
    /// line number 0 in error messages.
    pub fn with_cli_overrides(&self, pairs: &[String]) -> Result<Self> {
        let mut parsed = Vec::with_capacity(pairs.len());
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {p:?} is not key=value")))?;
            parsed.push((0, k.trim(), v.trim()));
        }
        self.with_overrides(parsed)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.run.eval_samples < 2 {
            return Err(Error::Config("eval_samples must be at least 2".into()));
        }
        if self.run.kid_blocks == 0 || self.run.kid_degree == 0 || self.run.kid_block == Some(0) {
            return Err(Error::Config("kid_blocks, kid_degree and kid_block must be positive".into()));
        }
        Ok(())
    }

    pub fn kid(&self) -> KidConfig {
        KidConfig {
            degree: self.run.kid_degree,
            offset: self.run.kid_offset,
            scale: None,
            block_size: self.run.kid_block,
            num_blocks: self.run.kid_blocks,
        }
    }

    /// Canonical text form; parsing it yields an equal configuration.
    pub fn to_text(&self) -> Result<String> {
        let (train, run) = self.to_maps()?;
        let mut out = String::from("# resolved configuration\n");
        for &(key, section, kind, _) in SCHEMA {
            let map = if section == Section::Train { &train } else { &run };
            match map.get(key) {
                None | Some(Value::Null) => out += &format!("# {key} unset\n"),
                Some(v) => out += &format!("{key} = {}\n", format_value(kind, v)),
            }
        }
        Ok(out)
    }

    /// Writes [`RESOLVED_CONFIG_FILE`] into `dir`.
    pub fn echo_to(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_text()?).map_err(|e| Error::io(&path, e))
    }
}

fn origin(line: usize) -> String {
    if line == 0 {
        "--set: ".to_string()
    } else {
        format!("line {line}: ")
    }
}
