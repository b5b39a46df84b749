//! Run configuration: analysis, architecture and schedule settings read from
//! a flat `key = value` file. Keys are dotted paths such as
//! `dsp.sample_rate_hz`, `model.width` or `train.adam.lr`; a `profile` key
//! (`paper` or `desk`) selects the defaults the other keys override.
//!
//! The speaker count and bin count are properties of the corpus and the
//! analysis settings, and the segment length lives in the schedule only, so
//! `model.n_speakers`, `model.feat_bins` and `model.segment_frames` are not
//! accepted.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::fingerprint;
use crate::model::ModelConfig;
use crate::training::TrainSchedule;

const DERIVED_KEYS: [&str; 3] = ["model.n_speakers", "model.feat_bins", "model.segment_frames"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::invalid(format!("unknown profile {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub dsp: DspConfig,
    pub model: ModelConfig,
    pub train: TrainSchedule,
    /// Sample conversions (WAV and spectrogram plot) are written every this
    /// many training steps; 0 disables them.
    pub sample_every: u64,
}

impl RunConfig {
    pub fn preset(profile: Profile) -> Self {
        let (dsp, model, train) = match profile {
            Profile::Paper => {
                let dsp = DspConfig::paper();
                let model = ModelConfig::paper(2, dsp.bins());
                (dsp, model, TrainSchedule::paper(0))
            }
            Profile::Desk => {
                let dsp = DspConfig::desk();
                let model = ModelConfig::desk(2, dsp.bins());
                (dsp, model, TrainSchedule::desk(0))
            }
        };
        Self { profile, dsp, model, train, sample_every: 0 }
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys,
    /// repeated keys and values of the wrong type are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if pairs.iter().any(|(seen, _): &(&str, &str)| *seen == k) {
                return Err(Error::invalid(format!("config key {k} given twice")));
            }
            pairs.push((k, v));
        }
        let profile = match pairs.iter().find(|(k, _)| *k == "profile") {
            Some((_, v)) => v.parse()?,
            None => Profile::Desk,
        };
        let mut tree = serde_json::to_value(Self::preset(profile))?;
        for (k, v) in pairs.into_iter().filter(|(k, _)| *k != "profile") {
            if DERIVED_KEYS.contains(&k) {
                return Err(Error::invalid(format!("{k} is derived from the corpus and schedule, not configurable")));
            }
            let slot = lookup(&mut tree, k)?;
            *slot = convert(slot, v).ok_or_else(|| Error::invalid(format!("bad value {v:?} for {k}")))?;
        }
        let cfg: Self =
            serde_json::from_value(tree).map_err(|e| Error::invalid(format!("config does not form valid settings: {e}")))?;
        cfg.checked()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key with its value, one `key = value` line each, sorted by key.
    /// Parsing the output gives back the same configuration.
    pub fn to_text(&self) -> String {
        let tree = serde_json::to_value(self).unwrap_or(Value::Null);
        let mut lines = Vec::new();
        flatten("", &tree, &mut lines);
        lines.retain(|(k, _)| !DERIVED_KEYS.contains(&k.as_str()));
        lines.sort();
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Model settings for a corpus with `n_speakers` speakers.
    pub fn model_for(&self, n_speakers: usize) -> ModelConfig {
        ModelConfig {
            n_speakers,
            feat_bins: self.dsp.bins(),
            segment_frames: self.train.segment_frames,
            ..self.model.clone()
        }
    }

    /// Schedule with its seed replaced.
    pub fn schedule(&self, seed: u64) -> TrainSchedule {
        TrainSchedule { seed, ..self.train.clone() }
    }

    pub fn fingerprint(&self) -> String {
        fingerprint::of(self)
    }

    fn checked(self) -> Result<Self> {
        self.dsp.validate()?;
        self.train.validate()?;
        self.model_for(2).validate()?;
        Ok(self)
    }
}

fn lookup<'a>(tree: &'a mut Value, key: &str) -> Result<&'a mut Value> {
    let mut node = tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m: &mut Map<String, Value>| m.get_mut(part))
            .ok_or_else(|| Error::invalid(format!("unknown config key {key}")))?;
    }
    if node.is_object() {
        return Err(Error::invalid(format!("config key {key} names a group, not a value")));
    }
    Ok(node)
}

/// Parses `text` as a value of the same JSON kind as `like`.
fn convert(like: &Value, text: &str) -> Option<Value> {
    match like {
        Value::Bool(_) => text.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => text.parse::<u64>().ok().map(Value::from),
        Value::Number(_) => text.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::from),
        Value::String(_) => Some(Value::String(text.to_string())),
        Value::Array(items) => {
            let proto = items.first().cloned().unwrap_or(Value::from(0u64));
            text.split(',').map(|p| convert(&proto, p.trim())).collect::<Option<Vec<_>>>().map(Value::Array)
        }
        _ => None,
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar).collect();
            out.push((prefix.to_string(), parts.join(",")));
        }
        other => out.push((prefix.to_string(), scalar(other))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
