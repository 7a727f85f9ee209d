//! Run configuration: a JSON object with flat dotted keys such as
//! `"finetune.max_epochs": 40`, merged over defaults and then over
//! `key=value` command-line overrides.
//!
//! Nested objects are accepted in files too and are flattened before the
//! merge. Arrays are leaf values (`"model.compression_hidden": [32, 16]`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::PhantomConfig;
use crate::error::{Error, Result};
use crate::experiment::PipelineConfig;
use crate::losses::SsimConfig;
use crate::model::ModelConfig;
use crate::optim::OptimConfig;
use crate::train::TrainConfig;

/// Environment variable naming the directory under which run directories
/// are created when `paths.run_dir` is unset.
pub const RUN_ROOT_ENV: &str = "DPNN_RUN_ROOT";

/// File name of the effective-config echo inside a run directory.
pub const CONFIG_ECHO: &str = "config.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Labeled manifest for fine-tuning, cross-validation and evaluation.
    pub manifest: Option<PathBuf>,
    /// Unlabeled manifest for pretraining.
    pub pretrain_manifest: Option<PathBuf>,
    /// Manifest of target maps written by `tf-project`.
    pub targets: Option<PathBuf>,
    pub pretrain_checkpoint: Option<PathBuf>,
    /// Fine-tuned network checkpoint, read by `eval` and `project`.
    pub checkpoint: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_class: usize,
    /// Size of the extra unlabeled pretraining corpus; 0 skips it.
    pub unlabeled: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 50,
            unlabeled: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalConfig {
    pub k: usize,
    /// Seed of the fold assignment.
    pub seed: u64,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        CrossvalConfig { k: 5, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub pipeline: PipelineConfig,
    pub phantom: PhantomConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub optim: OptimConfig,
    pub ssim: SsimConfig,
    pub crossval: CrossvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.model.validate()?;
        self.pretrain.validate("pretrain")?;
        self.finetune.validate("finetune")?;
        self.optim.validate()?;
        self.ssim.validate()?;
        if self.synth.n_per_class == 0 {
            return Err(Error::config("synth.n_per_class", "must be >= 1"));
        }
        if self.crossval.k < 2 {
            return Err(Error::config("crossval.k", format!("must be >= 2, got {}", self.crossval.k)));
        }
        Ok(())
    }

    /// Defaults, then `file` (if any), then `overrides` of the form
    /// `key=value`, then validation. Values are parsed as JSON and fall back
    /// to plain strings.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut flat = RunConfig::default().to_flat();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
            let Value::Object(obj) = value else {
                return Err(Error::config("config", format!("{} is not a JSON object", path.display())));
            };
            let mut from_file = BTreeMap::new();
            flatten("", &Value::Object(obj), &mut from_file);
            for (k, v) in from_file {
                set_key(&mut flat, &k, v)?;
            }
        }
        for o in overrides {
            let (k, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config("--set", format!("expected key=value, got {o:?}")))?;
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
            set_key(&mut flat, k.trim(), v)?;
        }
        let cfg = Self::from_flat(&flat)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat dotted-key map of every field.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut flat = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut flat);
        flat
    }

    fn from_flat(flat: &BTreeMap<String, Value>) -> Result<Self> {
        let nested = unflatten(flat);
        serde_path_to_error::deserialize(nested).map_err(|e| {
            let field = e.path().to_string();
            Error::config(field, e.into_inner().to_string())
        })
    }

    /// Pretty JSON of [`RunConfig::to_flat`], sorted by key; loading it
    /// reproduces this config exactly.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_flat()).expect("config serializes");
        s.push('\n');
        s
    }

    /// `paths.run_dir`, or `$DPNN_RUN_ROOT/<command>` (root defaults to `runs`).
    pub fn run_dir(&self, command: &str) -> PathBuf {
        match &self.paths.run_dir {
            Some(dir) => dir.clone(),
            None => std::env::var_os(RUN_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(command),
        }
    }
}

fn set_key(flat: &mut BTreeMap<String, Value>, key: &str, value: Value) -> Result<()> {
    match flat.get_mut(key) {
        Some(slot) => {
            *slot = value;
            Ok(())
        }
        None => Err(Error::config(key, "unknown configuration key")),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(obj) if !obj.is_empty() || prefix.is_empty() => {
            for (k, child) in obj {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_owned(), v.clone());
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(part) = parts.next() {
            if parts.peek().is_none() {
                node.insert(part.to_owned(), v.clone());
            } else {
                node = node
                    .entry(part.to_owned())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("dotted keys never collide with leaves");
            }
        }
    }
    Value::Object(root)
}
