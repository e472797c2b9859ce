//! Flat JSON run configuration with `--key=value` overrides.

use std::path::{Path, PathBuf};

use biam::data::{Split, SyntheticSpec};
use biam::experiment::EvalMode;
use biam::metrics::F1Averaging;
use biam::ops::TopKAggregate;
use biam::train::{LossNorm, TrainConfig};
use biam::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{config_err, CliResult};

pub const SEED_ENV: &str = "BIAM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Replaces the feature store named in the manifest.
    pub features: Option<PathBuf>,
    /// Replaces the embedding table named in the manifest.
    pub embeddings: Option<PathBuf>,
    /// Extra table appended to `embeddings`, typically the unseen classes.
    pub embeddings_unseen: Option<PathBuf>,
    /// Input checkpoint for eval, predict and attend; defaults to
    /// `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,

    /// Grid and widths; taken from the data when unset.
    pub h: Option<usize>,
    pub w: Option<usize>,
    pub d_r: Option<usize>,
    pub d_g: Option<usize>,
    pub d_a: Option<usize>,
    pub heads: usize,
    pub topk: usize,
    pub pool: TopKAggregate,

    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: Option<u64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub loss_norm: LossNorm,
    pub seed: Option<u64>,

    pub mode: EvalMode,
    pub split: Split,
    pub ks: Vec<usize>,
    pub averaging: F1Averaging,
    /// Labels per image written by `predict`.
    pub top_k: usize,

    pub ids: Vec<String>,
    pub classes: Vec<String>,

    pub images: usize,
    pub seen_classes: usize,
    pub unseen_classes: usize,
    pub strength: f64,
    pub patch: usize,
    pub label_rate: f64,
    pub test_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::desk();
        let train = TrainConfig::default();
        let synth = SyntheticSpec::desk();
        Self {
            manifest: None,
            features: None,
            embeddings: None,
            embeddings_unseen: None,
            checkpoint: None,
            out: None,
            h: None,
            w: None,
            d_r: None,
            d_g: None,
            d_a: None,
            heads: model.heads,
            topk: model.topk,
            pool: model.pool,
            batch_size: train.batch_size,
            epochs: train.epochs,
            warmup_steps: train.warmup_steps,
            lr: train.lr,
            beta1: train.beta1,
            beta2: train.beta2,
            loss_norm: train.loss_norm,
            seed: None,
            mode: EvalMode::Zsl,
            split: Split::Test,
            ks: vec![3, 5],
            averaging: F1Averaging::Micro,
            top_k: 3,
            ids: Vec::new(),
            classes: Vec::new(),
            images: synth.images,
            seen_classes: synth.seen_classes,
            unseen_classes: synth.unseen_classes,
            strength: synth.strength,
            patch: synth.patch,
            label_rate: synth.label_rate,
            test_fraction: synth.test_fraction,
        }
    }
}

/// Keys whose values stay strings even when they look like numbers.
const STRING_KEYS: &[&str] = &[
    "manifest",
    "features",
    "embeddings",
    "embeddings_unseen",
    "checkpoint",
    "out",
    "pool",
    "loss_norm",
    "mode",
    "split",
    "averaging",
    "ids",
    "classes",
];

fn default_map() -> Map<String, Value> {
    match serde_json::to_value(RunConfig::default()).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

pub fn known_keys() -> Vec<String> {
    default_map().keys().cloned().collect()
}

fn parse_scalar(key: &str, raw: &str) -> Value {
    if STRING_KEYS.contains(&key) {
        return Value::String(raw.to_string());
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Turns the text of a `--key=value` flag into JSON. Lists accept either
/// JSON arrays or comma-separated items.
pub fn parse_override(key: &str, raw: &str) -> CliResult<Value> {
    let defaults = default_map();
    let Some(default) = defaults.get(key) else {
        return Err(config_err(format!("unknown key {key:?}")));
    };
    if default.is_array() {
        if raw.trim_start().starts_with('[') {
            return serde_json::from_str(raw).map_err(|e| config_err(format!("--{key}: {e}")));
        }
        let items = raw.split(',').map(str::trim).filter(|s| !s.is_empty());
        return Ok(Value::Array(items.map(|s| parse_scalar(key, s)).collect()));
    }
    Ok(parse_scalar(key, raw))
}

/// Defaults, then the config file, then flag overrides.
pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> CliResult<RunConfig> {
    let mut merged = default_map();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let Value::Object(entries) = value else {
            return Err(config_err(format!("{}: expected a JSON object", path.display())));
        };
        for (k, v) in entries {
            if !merged.contains_key(&k) {
                return Err(config_err(format!("{}: unknown key {k:?}", path.display())));
            }
            merged.insert(k, v);
        }
    }
    for (k, raw) in overrides {
        let v = parse_override(k, raw)?;
        merged.insert(k.clone(), v);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| config_err(e.to_string()))
}

impl RunConfig {
    /// Explicit seed, else `BIAM_SEED`, else `fallback`.
    pub fn seed_or(&self, fallback: u64) -> CliResult<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| config_err(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(fallback),
        }
    }

    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| config_err("an output directory is required (--out=DIR)"))
    }

    pub fn manifest_path(&self) -> CliResult<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| config_err("a dataset manifest is required (--manifest=FILE)"))
    }

    pub fn checkpoint_path(&self) -> CliResult<PathBuf> {
        match &self.checkpoint {
            Some(p) => Ok(p.clone()),
            None => Ok(self.out_dir()?.join(crate::commands::CHECKPOINT_FILE)),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_steps: self.warmup_steps,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            seed,
            loss_norm: self.loss_norm,
        }
    }

    pub fn synthetic_spec(&self, seed: u64) -> SyntheticSpec {
        let desk = SyntheticSpec::desk();
        SyntheticSpec {
            images: self.images,
            seen_classes: self.seen_classes,
            unseen_classes: self.unseen_classes,
            h: self.h.unwrap_or(desk.h),
            w: self.w.unwrap_or(desk.w),
            d_r: self.d_r.unwrap_or(desk.d_r),
            d_g: self.d_g.unwrap_or(desk.d_g),
            d_a: self.d_a.unwrap_or(desk.d_a),
            strength: self.strength,
            patch: self.patch,
            label_rate: self.label_rate,
            test_fraction: self.test_fraction,
            seed,
        }
    }
}
