//! The pluggable text-to-image backbone contract.
//!
//! A backbone supplies the four capabilities prompt-embedding optimization
//! needs (text encoder, generator, image encoder, aesthetic scorer) plus the
//! reverse-mode hooks that let the optimizer pull objective gradients back
//! to the conditional embedding. Only the conditional embedding is ever
//! optimized; the unconditional (empty-prompt) embedding used for guidance is
//! owned by the backbone and never handed out mutably.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PeoError, Result};
use crate::objective::{Gradient, ImageFeatures, ObjectiveWeights, PromptEmbedding};
use crate::optimizer::{evaluate_objective_only, evaluate_with_gradient};
use crate::toy::{ToyBackbone, ToyParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSettings {
    pub sampler_name: String,
    pub sampling_steps: u32,
    pub guidance_scale: f64,
    pub differentiated_steps: u32,
    pub height: u32,
    pub width: u32,
    pub seed: u64,
}

impl GenerationSettings {
    pub fn validate(&self) -> Result<()> {
        if self.sampling_steps == 0 {
            return Err(PeoError::InvalidConfig(
                "sampling_steps must be positive".into(),
            ));
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(PeoError::InvalidConfig(format!(
                "guidance_scale = {} must be finite and nonnegative",
                self.guidance_scale
            )));
        }
        if self.differentiated_steps == 0 || self.differentiated_steps > self.sampling_steps {
            return Err(PeoError::InvalidConfig(format!(
                "differentiated_steps = {} must lie in [1, {}]",
                self.differentiated_steps, self.sampling_steps
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(PeoError::InvalidConfig(
                "height and width must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Guidance mixes in the unconditional branch whenever the scale is positive.
    pub fn uses_guidance(&self) -> bool {
        self.guidance_scale > 0.0
    }

    /// Number of denoiser evaluations one generation performs.
    pub fn denoise_evaluations(&self) -> u32 {
        self.sampling_steps * if self.uses_guidance() { 2 } else { 1 }
    }
}

/// Named sampling presets. Applying a preset only touches the sampler
/// fields; resolution and seed stay with the backbone defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Multi-step latent diffusion with guidance (SD-v1-5 class).
    Sd15,
    /// Single-step distilled model without guidance (SDXL Turbo class).
    Turbo,
}

impl Preset {
    pub fn apply(self, mut settings: GenerationSettings) -> GenerationSettings {
        settings.sampler_name = "unipc".into();
        match self {
            Preset::Sd15 => {
                settings.sampling_steps = 15;
                settings.guidance_scale = 7.5;
                settings.differentiated_steps = 1;
            }
            Preset::Turbo => {
                settings.sampling_steps = 1;
                settings.guidance_scale = 0.0;
                settings.differentiated_steps = 1;
            }
        }
        settings
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sd15" | "sd-v1-5" => Ok(Preset::Sd15),
            "turbo" | "sdxl-turbo" => Ok(Preset::Turbo),
            other => Err(PeoError::InvalidConfig(format!(
                "unknown preset `{other}` (expected sd15 or turbo)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backbone_id: String,
    pub settings: GenerationSettings,
    pub step: Option<usize>,
    pub denoise_evaluations: u32,
}

/// Pixels in `[0, 1]`, row-major `height × width × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pixels: Vec<f64>,
    pub provenance: Provenance,
}

impl GeneratedImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(PeoError::DimensionMismatch {
                context: "image pixels",
                expected: height * width * channels,
                actual: pixels.len(),
            });
        }
        if let Some(bad) = pixels
            .iter()
            .find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p)))
        {
            return Err(PeoError::NonFinite(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            provenance,
        })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.pixels {
            hasher.update(p.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// 8-bit PNG, grayscale for one channel and RGB for three.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(PeoError::Image(format!("unsupported channel count {c}"))),
        };
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|p| (p * 255.0).round() as u8)
            .collect();
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            encoder,
            &bytes,
            self.width as u32,
            self.height as u32,
            color,
        )
        .map_err(|e| PeoError::Image(e.to_string()))?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.to_png()?;
        fs::write(path, bytes).map_err(|e| PeoError::io(path, e))
    }
}

/// Capabilities a backbone must provide.
///
/// `generate` must be deterministic for fixed `(theta, settings)`. The
/// `*_vjp` methods are vector-Jacobian products: given a cotangent on the
/// output they return the cotangent on the input.
pub trait Backbone: Send + Sync {
    fn id(&self) -> &str;

    fn encoder_count(&self) -> usize;

    /// Whether `generate` and the scorers may be called from several threads
    /// at once.
    fn concurrent_safe(&self) -> bool {
        false
    }

    fn default_settings(&self) -> GenerationSettings;

    fn text_encode(&self, prompt: &str) -> Result<PromptEmbedding>;

    /// The frozen empty-prompt embedding used by the unconditional branch.
    fn unconditional_embedding(&self) -> &PromptEmbedding;

    fn generate(
        &self,
        theta: &PromptEmbedding,
        settings: &GenerationSettings,
    ) -> Result<GeneratedImage>;

    /// One feature vector per text encoder, paired by index.
    fn image_encode(&self, image: &GeneratedImage) -> Result<Vec<ImageFeatures>>;

    /// Raw score on the 0–10 scale.
    fn aesthetic_score(&self, image: &GeneratedImage) -> Result<f64>;

    fn aesthetic_score_vjp(&self, image: &GeneratedImage, cotangent: f64) -> Result<Vec<f64>>;

    fn image_encode_vjp(&self, image: &GeneratedImage, cotangents: &[Vec<f64>])
        -> Result<Vec<f64>>;

    fn generate_vjp(
        &self,
        theta: &PromptEmbedding,
        settings: &GenerationSettings,
        pixel_cotangent: &[f64],
    ) -> Result<Gradient>;
}

pub fn encode_prompt(prompt: &str, backbone: &dyn Backbone) -> Result<PromptEmbedding> {
    if prompt.trim().is_empty() {
        return Err(PeoError::InvalidInput("prompt must not be empty".into()));
    }
    let emb = backbone.text_encode(prompt)?;
    if emb.encoder_count() != backbone.encoder_count() {
        return Err(PeoError::StructureMismatch(format!(
            "backbone `{}` declares {} encoders but emitted {}",
            backbone.id(),
            backbone.encoder_count(),
            emb.encoder_count()
        )));
    }
    Ok(emb)
}

pub fn generate_image(
    theta: &PromptEmbedding,
    settings: &GenerationSettings,
    backbone: &dyn Backbone,
) -> Result<GeneratedImage> {
    settings.validate()?;
    backbone
        .unconditional_embedding()
        .ensure_same_structure(theta)?;
    backbone.generate(theta, settings)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityReport {
    pub backbone_id: String,
    pub checks: Vec<CapabilityCheck>,
}

impl CapabilityReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CapabilityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const PROBE_PROMPT: &str = "capability probe";

/// Probe a backbone for the properties the optimizer relies on. Failures are
/// reported, never raised.
pub fn capability_check(
    backbone: &dyn Backbone,
    settings: &GenerationSettings,
) -> CapabilityReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, outcome: std::result::Result<String, String>| {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        checks.push(CapabilityCheck {
            name: name.into(),
            passed,
            detail,
        });
    };

    let theta = backbone.text_encode(PROBE_PROMPT);

    push(
        "encoder_count",
        (|| {
            let theta = theta.as_ref().map_err(|e| e.to_string())?;
            let declared = backbone.encoder_count();
            if theta.encoder_count() != declared {
                return Err(format!(
                    "declared {declared} encoders, text encoder emitted {}",
                    theta.encoder_count()
                ));
            }
            let uncond = backbone.unconditional_embedding().encoder_count();
            if uncond != declared {
                return Err(format!("unconditional embedding has {uncond} vectors"));
            }
            let image = backbone
                .generate(theta, settings)
                .map_err(|e| e.to_string())?;
            let features = backbone.image_encode(&image).map_err(|e| e.to_string())?;
            if features.len() != declared {
                return Err(format!(
                    "image encoder emitted {} feature vectors",
                    features.len()
                ));
            }
            Ok(format!("{declared} encoder(s)"))
        })(),
    );

    push(
        "determinism",
        (|| {
            let theta = theta.as_ref().map_err(|e| e.to_string())?;
            let a = backbone
                .generate(theta, settings)
                .map_err(|e| e.to_string())?;
            let b = backbone
                .generate(theta, settings)
                .map_err(|e| e.to_string())?;
            if a.checksum() == b.checksum() {
                Ok(format!("checksum {}", &a.checksum()[..16]))
            } else {
                Err("two generations with identical inputs differ".into())
            }
        })(),
    );

    push(
        "differentiability",
        (|| {
            let theta = theta.as_ref().map_err(|e| e.to_string())?;
            let weights = ObjectiveWeights::default();
            let eval = evaluate_with_gradient(backbone, settings, theta, theta, &weights)
                .map_err(|e| e.to_string())?;
            let h = 1e-4;
            let shifted = |delta: f64| -> std::result::Result<f64, String> {
                let mut vectors = theta.vectors().to_vec();
                vectors[0][0] += delta;
                let probe = theta.with_vectors(vectors).map_err(|e| e.to_string())?;
                evaluate_objective_only(backbone, settings, &probe, theta, &weights)
                    .map(|b| b.total)
                    .map_err(|e| e.to_string())
            };
            let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            let analytic = eval.gradient.parts()[0][0];
            let abs = (numeric - analytic).abs();
            let rel = abs / numeric.abs().max(analytic.abs()).max(1e-12);
            if abs < 1e-6 || rel < 1e-3 {
                Ok(format!("analytic {analytic:.6e} vs numeric {numeric:.6e}"))
            } else {
                Err(format!(
                    "analytic {analytic:.6e} vs numeric {numeric:.6e} (rel err {rel:.2e})"
                ))
            }
        })(),
    );

    CapabilityReport {
        backbone_id: backbone.id().to_string(),
        checks,
    }
}

/// A backbone descriptor as found in an adapters directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneDescriptor {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

type Factory = Box<dyn Fn(&str, &serde_json::Value) -> Result<Arc<dyn Backbone>> + Send + Sync>;

/// Name → backbone lookup. Kinds are constructors; names bind a kind to
/// parameters.
pub struct BackboneRegistry {
    kinds: BTreeMap<String, Factory>,
    entries: BTreeMap<String, BackboneDescriptor>,
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyKindParams {
    #[serde(default)]
    encoders: Option<usize>,
    #[serde(default)]
    fixtures: Option<PathBuf>,
    #[serde(default)]
    aesthetic_gain: Option<f64>,
}

impl BackboneRegistry {
    pub fn empty() -> Self {
        Self {
            kinds: BTreeMap::new(),
            entries: BTreeMap::new(),
        }
    }

    /// Registry with the `toy` kind and the `toy` / `toy-dual` names.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register_kind("toy", |name, params| {
            let p: ToyKindParams = if params.is_null() {
                ToyKindParams::default()
            } else {
                serde_json::from_value(params.clone())?
            };
            let toy_params = match &p.fixtures {
                Some(dir) => ToyParams::load(dir)?,
                None => ToyParams::builtin()?,
            };
            let mut backbone =
                ToyBackbone::new(Arc::new(toy_params), p.encoders.unwrap_or(1))?.with_id(name);
            if let Some(gain) = p.aesthetic_gain {
                backbone = backbone.with_aesthetic_gain(gain)?;
            }
            Ok(Arc::new(backbone) as Arc<dyn Backbone>)
        });
        reg.insert(BackboneDescriptor {
            name: "toy".into(),
            kind: "toy".into(),
            params: serde_json::Value::Null,
        });
        reg.insert(BackboneDescriptor {
            name: "toy-dual".into(),
            kind: "toy".into(),
            params: serde_json::json!({ "encoders": 2 }),
        });
        reg
    }

    pub fn register_kind<F>(&mut self, kind: &str, factory: F)
    where
        F: Fn(&str, &serde_json::Value) -> Result<Arc<dyn Backbone>> + Send + Sync + 'static,
    {
        self.kinds.insert(kind.to_string(), Box::new(factory));
    }

    pub fn insert(&mut self, descriptor: BackboneDescriptor) {
        self.entries.insert(descriptor.name.clone(), descriptor);
    }

    /// Load every `*.json` descriptor in `dir`, in file-name order. Later
    /// files override earlier names.
    pub fn discover(&mut self, dir: &Path) -> Result<usize> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| PeoError::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        paths.sort();
        for path in &paths {
            let text = fs::read_to_string(path).map_err(|e| PeoError::io(path, e))?;
            let descriptor: BackboneDescriptor = serde_json::from_str(&text)?;
            if !self.kinds.contains_key(&descriptor.kind) {
                return Err(PeoError::InvalidConfig(format!(
                    "{}: unknown backbone kind `{}`",
                    path.display(),
                    descriptor.kind
                )));
            }
            self.insert(descriptor);
        }
        Ok(paths.len())
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn resolve(&self, name: &str) -> Result<Arc<dyn Backbone>> {
        let descriptor = self.entries.get(name).ok_or_else(|| {
            PeoError::InvalidConfig(format!(
                "unknown backbone `{name}` (available: {})",
                self.names().join(", ")
            ))
        })?;
        let factory = self.kinds.get(&descriptor.kind).ok_or_else(|| {
            PeoError::InvalidConfig(format!(
                "backbone kind `{}` is not registered",
                descriptor.kind
            ))
        })?;
        factory(&descriptor.name, &descriptor.params)
    }
}
