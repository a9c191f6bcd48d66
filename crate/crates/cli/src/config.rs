//! Run configuration: JSON file, command-line overrides and defaults.
//!
//! Precedence is flags, then file, then defaults. Unknown keys anywhere in
//! the file are an error naming every offender. The resolved configuration
//! is echoed into each output directory as `config.json`; feeding that file
//! back with `--config` reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};

use peo_core::harness::PromptOrigin;
use peo_core::{
    Algorithm, Backbone, GenerationSettings, ObjectiveWeights, OptimizerConfig, Preset,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_steps: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub differentiated_steps: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
}

impl SettingsOverrides {
    fn overlay(&mut self, other: &Self) {
        overlay(&mut self.sampler_name, &other.sampler_name);
        overlay(&mut self.sampling_steps, &other.sampling_steps);
        overlay(&mut self.guidance_scale, &other.guidance_scale);
        overlay(&mut self.differentiated_steps, &other.differentiated_steps);
        overlay(&mut self.height, &other.height);
        overlay(&mut self.width, &other.width);
    }

    fn full(s: &GenerationSettings) -> Self {
        Self {
            sampler_name: Some(s.sampler_name.clone()),
            sampling_steps: Some(s.sampling_steps),
            guidance_scale: Some(s.guidance_scale),
            differentiated_steps: Some(s.differentiated_steps),
            height: Some(s.height),
            width: Some(s.width),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    pub w3: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerFile {
    pub algorithm: Option<Algorithm>,
    pub learning_rate: Option<f64>,
    pub max_steps: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub weight_decay: Option<f64>,
    pub clip_norm: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Lr,
    Weights,
    Optimizer,
}

impl SweepKind {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "lr" => Ok(Self::Lr),
            "weights" => Ok(Self::Weights),
            "optimizer" => Ok(Self::Optimizer),
            _ => Err(CliError::usage(format!(
                "unknown sweep kind `{s}` (expected lr, weights or optimizer)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub kind: Option<SweepKind>,
    /// Learning rates or weight-grid values, by kind.
    pub values: Option<Vec<f64>>,
    pub algorithms: Option<Vec<Algorithm>>,
}

/// A configuration layer: everything optional. Both the JSON file and the
/// command-line flags produce one of these.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub backbone: Option<String>,
    pub preset: Option<String>,
    pub settings: Option<SettingsOverrides>,
    pub weights: Option<WeightsFile>,
    pub optimizer: Option<OptimizerFile>,
    pub prompt: Option<String>,
    pub prompt_set: Option<PathBuf>,
    pub prompt_origin: Option<String>,
    pub seed: Option<u64>,
    pub sweep: Option<SweepFile>,
    pub output_dir: Option<PathBuf>,
}

fn overlay<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
    if src.is_some() {
        dst.clone_from(src);
    }
}

impl ConfigLayer {
    /// Fields set in `top` win.
    pub fn overlay(&mut self, top: &ConfigLayer) {
        overlay(&mut self.backbone, &top.backbone);
        overlay(&mut self.preset, &top.preset);
        if let Some(s) = &top.settings {
            self.settings
                .get_or_insert_with(Default::default)
                .overlay(s);
        }
        if let Some(w) = &top.weights {
            let dst = self.weights.get_or_insert_with(Default::default);
            overlay(&mut dst.w1, &w.w1);
            overlay(&mut dst.w2, &w.w2);
            overlay(&mut dst.w3, &w.w3);
        }
        if let Some(o) = &top.optimizer {
            let dst = self.optimizer.get_or_insert_with(Default::default);
            overlay(&mut dst.algorithm, &o.algorithm);
            overlay(&mut dst.learning_rate, &o.learning_rate);
            overlay(&mut dst.max_steps, &o.max_steps);
            overlay(&mut dst.beta1, &o.beta1);
            overlay(&mut dst.beta2, &o.beta2);
            overlay(&mut dst.eps, &o.eps);
            overlay(&mut dst.weight_decay, &o.weight_decay);
            overlay(&mut dst.clip_norm, &o.clip_norm);
            overlay(&mut dst.seed, &o.seed);
        }
        overlay(&mut self.prompt, &top.prompt);
        overlay(&mut self.prompt_set, &top.prompt_set);
        overlay(&mut self.prompt_origin, &top.prompt_origin);
        overlay(&mut self.seed, &top.seed);
        if let Some(s) = &top.sweep {
            let dst = self.sweep.get_or_insert_with(Default::default);
            overlay(&mut dst.kind, &s.kind);
            overlay(&mut dst.values, &s.values);
            overlay(&mut dst.algorithms, &s.algorithms);
        }
        overlay(&mut self.output_dir, &top.output_dir);
    }
}

const TOP_KEYS: &[&str] = &[
    "backbone",
    "preset",
    "settings",
    "weights",
    "optimizer",
    "prompt",
    "prompt_set",
    "prompt_origin",
    "seed",
    "sweep",
    "output_dir",
];
const SETTINGS_KEYS: &[&str] = &[
    "sampler_name",
    "sampling_steps",
    "guidance_scale",
    "differentiated_steps",
    "height",
    "width",
];
const WEIGHT_KEYS: &[&str] = &["w1", "w2", "w3"];
const OPTIMIZER_KEYS: &[&str] = &[
    "algorithm",
    "learning_rate",
    "max_steps",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "clip_norm",
    "seed",
];
const SWEEP_KEYS: &[&str] = &["kind", "values", "algorithms"];

/// Dotted paths of every key not in the schema.
pub fn unknown_keys(doc: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Some(top) = doc.as_object() else {
        return out;
    };
    for (key, value) in top {
        if !TOP_KEYS.contains(&key.as_str()) {
            out.push(key.clone());
            continue;
        }
        let nested = match key.as_str() {
            "settings" => SETTINGS_KEYS,
            "weights" => WEIGHT_KEYS,
            "optimizer" => OPTIMIZER_KEYS,
            "sweep" => SWEEP_KEYS,
            _ => continue,
        };
        if let Some(obj) = value.as_object() {
            out.extend(
                obj.keys()
                    .filter(|k| !nested.contains(&k.as_str()))
                    .map(|k| format!("{key}.{k}")),
            );
        }
    }
    out
}

/// Parse a configuration document.
pub fn parse_config(text: &str) -> Result<ConfigLayer, CliError> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| CliError::usage(format!("config is not valid JSON: {e}")))?;
    if !doc.is_object() {
        return Err(CliError::usage("config must be a JSON object"));
    }
    let unknown = unknown_keys(&doc);
    if !unknown.is_empty() {
        return Err(CliError::usage(format!(
            "unknown config keys: {}",
            unknown.join(", ")
        )));
    }
    serde_json::from_value(doc).map_err(|e| CliError::usage(format!("invalid config: {e}")))
}

/// Read a configuration file and resolve it against the defaults.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    RunConfig::resolve(&parse_config(&text)?)
}

/// The effective configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backbone: String,
    pub preset: Option<Preset>,
    pub settings: SettingsOverrides,
    pub weights: ObjectiveWeights,
    pub optimizer: OptimizerConfig,
    pub prompt: Option<String>,
    pub prompt_set: Option<PathBuf>,
    pub prompt_origin: PromptOrigin,
    pub seed: u64,
    pub sweep: SweepFile,
    /// Not echoed: the same config must reproduce a run in any directory.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backbone: "toy".into(),
            preset: None,
            settings: SettingsOverrides::default(),
            weights: ObjectiveWeights::default(),
            optimizer: OptimizerConfig::default(),
            prompt: None,
            prompt_set: None,
            prompt_origin: PromptOrigin::Custom,
            seed: 0,
            sweep: SweepFile::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Apply `layer` over the defaults and validate weights and optimizer.
    pub fn resolve(layer: &ConfigLayer) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(b) = &layer.backbone {
            cfg.backbone = b.clone();
        }
        if let Some(p) = &layer.preset {
            cfg.preset = Some(Preset::parse(p).map_err(CliError::usage)?);
        }
        if let Some(s) = &layer.settings {
            cfg.settings = s.clone();
        }
        if let Some(w) = &layer.weights {
            let d = ObjectiveWeights::default();
            cfg.weights = ObjectiveWeights {
                w1: w.w1.unwrap_or(d.w1),
                w2: w.w2.unwrap_or(d.w2),
                w3: w.w3.unwrap_or(d.w3),
            };
        }
        if let Some(o) = &layer.optimizer {
            let d = OptimizerConfig::default();
            cfg.optimizer = OptimizerConfig {
                algorithm: o.algorithm.unwrap_or(d.algorithm),
                learning_rate: o.learning_rate.unwrap_or(d.learning_rate),
                max_steps: o.max_steps.unwrap_or(d.max_steps),
                beta1: o.beta1.unwrap_or(d.beta1),
                beta2: o.beta2.unwrap_or(d.beta2),
                eps: o.eps.unwrap_or(d.eps),
                weight_decay: o.weight_decay.unwrap_or(d.weight_decay),
                clip_norm: o.clip_norm.or(d.clip_norm),
                seed: o.seed.unwrap_or(d.seed),
            };
        }
        cfg.prompt.clone_from(&layer.prompt);
        cfg.prompt_set.clone_from(&layer.prompt_set);
        if let Some(o) = &layer.prompt_origin {
            cfg.prompt_origin = PromptOrigin::parse(o).map_err(CliError::usage)?;
        }
        if let Some(s) = layer.seed {
            cfg.seed = s;
        }
        if let Some(s) = &layer.sweep {
            cfg.sweep = s.clone();
        }
        cfg.output_dir.clone_from(&layer.output_dir);
        cfg.weights.validate().map_err(CliError::usage)?;
        cfg.optimizer.validate().map_err(CliError::usage)?;
        Ok(cfg)
    }

    /// Backbone defaults, then the preset, then explicit fields. The
    /// generation seed is the global seed.
    pub fn generation_settings(
        &self,
        backbone: &dyn Backbone,
    ) -> Result<GenerationSettings, CliError> {
        let mut s = backbone.default_settings();
        if let Some(p) = self.preset {
            s = p.apply(s);
        }
        let o = &self.settings;
        if let Some(v) = &o.sampler_name {
            s.sampler_name = v.clone();
        }
        if let Some(v) = o.sampling_steps {
            s.sampling_steps = v;
        }
        if let Some(v) = o.guidance_scale {
            s.guidance_scale = v;
        }
        if let Some(v) = o.differentiated_steps {
            s.differentiated_steps = v;
        }
        if let Some(v) = o.height {
            s.height = v;
        }
        if let Some(v) = o.width {
            s.width = v;
        }
        s.seed = self.seed;
        s.validate().map_err(CliError::usage)?;
        Ok(s)
    }

    /// The fully resolved configuration as JSON, in the file format.
    pub fn echo(&self, settings: &GenerationSettings) -> Value {
        let mut doc = serde_json::json!({
            "backbone": self.backbone,
            "settings": SettingsOverrides::full(settings),
            "weights": self.weights,
            "optimizer": self.optimizer,
            "prompt_origin": self.prompt_origin.label(),
            "seed": self.seed,
        });
        let obj = doc.as_object_mut().expect("object literal");
        if let Some(p) = self.preset {
            obj.insert(
                "preset".into(),
                serde_json::to_value(p).expect("preset serializes"),
            );
        }
        if let Some(p) = &self.prompt {
            obj.insert("prompt".into(), Value::String(p.clone()));
        }
        if let Some(p) = &self.prompt_set {
            obj.insert("prompt_set".into(), Value::String(p.display().to_string()));
        }
        if self.sweep != SweepFile::default() {
            obj.insert(
                "sweep".into(),
                serde_json::to_value(&self.sweep).expect("sweep serializes"),
            );
        }
        doc
    }
}
