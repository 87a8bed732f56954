//! Run configuration: a preset, then a flat dotted-key JSON file, then
//! `--set` overrides, then dedicated flags. Later layers win.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use avsep_core::infer::WindowConfig;
use avsep_core::model::ModelConfig;
use avsep_core::train::{Ablation, TrainConfig};
use avsep_core::util::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub window: WindowConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name).ok_or_else(|| anyhow!("unknown preset {name:?} (paper, desk, tiny)"))?;
        let train = if name == "paper" { TrainConfig::default() } else { TrainConfig::desk() };
        let window = WindowConfig::for_model(&model);
        Ok(Self {
            preset: name.to_string(),
            model,
            train,
            window,
        })
    }

    /// `source` is a preset name or a path to a JSON file of dotted keys. A
    /// file may name its base preset under `"preset"` (default desk).
    pub fn resolve(source: Option<&str>, sets: &[(String, Value)]) -> Result<Self> {
        let mut layers: Vec<(String, Value)> = Vec::new();
        let base = match source {
            None => "desk".to_string(),
            Some(s) if ModelConfig::preset(s).is_some() => s.to_string(),
            Some(path) => {
                let text = std::fs::read_to_string(Path::new(path)).with_context(|| format!("reading config {path}"))?;
                let flat: Map<String, Value> =
                    serde_json::from_str(&text).with_context(|| format!("{path}: expected a JSON object of dotted keys"))?;
                let mut base = "desk".to_string();
                for (k, v) in flat {
                    if k == "preset" {
                        base = v.as_str().ok_or_else(|| anyhow!("{path}: preset must be a string"))?.to_string();
                    } else {
                        layers.push((k, v));
                    }
                }
                base
            }
        };
        layers.extend(sets.iter().cloned());
        let mut tree = serde_json::to_value(Self::preset(&base)?)?;
        let window_set = layers.iter().any(|(k, _)| k.starts_with("window"));
        for (key, value) in &layers {
            assign(&mut tree, key, value.clone())?;
        }
        let mut cfg: RunConfig = serde_json::from_value(tree).context("invalid configuration")?;
        if !window_set {
            cfg.window = WindowConfig::for_model(&cfg.model);
        }
        Ok(cfg)
    }

    pub fn apply_ablation(&mut self, ab: Ablation) {
        ab.apply(&mut self.model, &mut self.train);
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.window.validate()?;
        Ok(())
    }

    /// Hash of every effective setting.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Sets `dotted` inside `tree`. Every path component must already exist so
/// typos are rejected rather than ignored.
fn assign(tree: &mut Value, dotted: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            _ => bail!("unknown config key {dotted:?}: {} is not a section", parts[..i].join(".")),
        };
        if !obj.contains_key(*part) {
            bail!("unknown config key {dotted:?}");
        }
        let slot = obj.get_mut(*part).expect("checked");
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    bail!("empty config key")
}

/// Parses `KEY=VALUE`; the value is JSON when it parses, else a string.
pub fn parse_set(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
