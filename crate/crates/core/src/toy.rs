//! Deterministic, analytically differentiable reference backbone.
//!
//! The toy backbone stands in for a real text-to-image model at desk scale:
//!
//! * text encoder: prompt bytes → FNV-1a fold → per-coordinate splitmix64
//!   finalizer → values in `[-1, 1)` → unit norm (dimension `d`, default 16)
//! * generator: `pixels = logistic(W_gen · θ)` reshaped to an 8×8 grayscale image
//! * image encoder: `W_img · pixels`, unit-normalized
//! * aesthetic scorer: `10 · logistic(v_aes · pixels)`
//!
//! All matrices live in committed fixture files (little-endian binary64,
//! row-major) described by `manifest.json`, which also carries the text
//! encoder constants and SHA-256 checksums. See `fixtures/toy/v1/README.md`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::backbone::{Backbone, GeneratedImage, GenerationSettings, Provenance};
use crate::error::{PeoError, Result};
use crate::objective::{Gradient, ImageFeatures, PromptEmbedding};
use crate::vecmath::{all_finite, dot, logistic, matvec, matvec_t, norm};

/// A `u64` serialized as a `0x`-prefixed hex string so JSON readers that
/// parse numbers as doubles keep every bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HexU64(pub u64);

impl Serialize for HexU64 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:#018x}", self.0))
    }
}

impl<'de> Deserialize<'de> for HexU64 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let digits = s
            .strip_prefix("0x")
            .ok_or_else(|| D::Error::custom(format!("expected 0x-prefixed hex, got `{s}`")))?;
        u64::from_str_radix(digits, 16)
            .map(HexU64)
            .map_err(D::Error::custom)
    }
}

impl fmt::Display for HexU64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#018x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextEncoderConstants {
    pub fnv_offset: HexU64,
    pub fnv_prime: HexU64,
    pub gamma: HexU64,
    pub mix1: HexU64,
    pub mix2: HexU64,
    /// One salt per text encoder; the toy supports as many encoders as salts.
    pub encoder_salts: Vec<HexU64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEntry {
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    /// Stream index fed to [`generate_matrix`].
    pub stream: u64,
    pub scale: f64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyManifest {
    pub version: u32,
    pub dim: usize,
    pub image_side: usize,
    pub layout: String,
    pub generator: String,
    pub seed: HexU64,
    pub matrices: BTreeMap<String, MatrixEntry>,
    pub text_encoder: TextEncoderConstants,
}

pub const MATRIX_LAYOUT: &str = "row-major little-endian IEEE-754 binary64";
pub const MATRIX_GENERATOR: &str = "splitmix64-counter";

/// splitmix64 output function.
pub fn splitmix_finalize(mut z: u64, mix1: u64, mix2: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(mix1);
    z = (z ^ (z >> 27)).wrapping_mul(mix2);
    z ^ (z >> 31)
}

/// Top 53 bits of `z` mapped onto `[-1, 1)`.
fn signed_unit(z: u64) -> f64 {
    let u = (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    2.0 * u - 1.0
}

/// Counter-based matrix fill: element `j` (row-major) is
/// `scale · signed_unit(finalize(seed + (stream << 32) + (j + 1)·gamma))`.
pub fn generate_matrix(
    constants: &TextEncoderConstants,
    seed: u64,
    stream: u64,
    rows: usize,
    cols: usize,
    scale: f64,
) -> Vec<f64> {
    let base = seed.wrapping_add(stream << 32);
    (0..rows * cols)
        .map(|j| {
            let state = base.wrapping_add((j as u64 + 1).wrapping_mul(constants.gamma.0));
            scale * signed_unit(splitmix_finalize(state, constants.mix1.0, constants.mix2.0))
        })
        .collect()
}

pub fn matrix_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn matrix_from_bytes(name: &str, entry: &MatrixEntry, bytes: &[u8]) -> Result<Vec<f64>> {
    let expected = entry.rows * entry.cols * 8;
    if bytes.len() != expected {
        return Err(PeoError::Fixture(format!(
            "{name}: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let digest = sha256_hex(bytes);
    if digest != entry.sha256 {
        return Err(PeoError::Fixture(format!(
            "{name}: checksum {digest} does not match manifest {}",
            entry.sha256
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if !all_finite(&values) {
        return Err(PeoError::Fixture(format!("{name}: non-finite entries")));
    }
    Ok(values)
}

/// Loaded toy parameters. Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    pub manifest: ToyManifest,
    pub w_gen: Vec<f64>,
    pub w_img: Vec<f64>,
    pub v_aes: Vec<f64>,
}

const BUILTIN_MANIFEST: &str = include_str!("../fixtures/toy/v1/manifest.json");
const BUILTIN_W_GEN: &[u8] = include_bytes!("../fixtures/toy/v1/w_gen.bin");
const BUILTIN_W_IMG: &[u8] = include_bytes!("../fixtures/toy/v1/w_img.bin");
const BUILTIN_V_AES: &[u8] = include_bytes!("../fixtures/toy/v1/v_aes.bin");

impl ToyParams {
    /// The committed v1 fixture set, embedded at compile time.
    pub fn builtin() -> Result<Self> {
        let manifest: ToyManifest = serde_json::from_str(BUILTIN_MANIFEST)?;
        let mut files = BTreeMap::new();
        files.insert("w_gen", BUILTIN_W_GEN);
        files.insert("w_img", BUILTIN_W_IMG);
        files.insert("v_aes", BUILTIN_V_AES);
        Self::from_parts(manifest, |name| {
            files
                .get(name)
                .map(|b| b.to_vec())
                .ok_or_else(|| PeoError::Fixture(format!("no builtin matrix `{name}`")))
        })
    }

    /// Load a fixture directory containing `manifest.json` and the matrix files.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text =
            fs::read_to_string(&manifest_path).map_err(|e| PeoError::io(&manifest_path, e))?;
        let manifest: ToyManifest = serde_json::from_str(&text)?;
        let entries = manifest.matrices.clone();
        Self::from_parts(manifest, |name| {
            let entry = entries
                .get(name)
                .ok_or_else(|| PeoError::Fixture(format!("manifest lacks matrix `{name}`")))?;
            let path = dir.join(&entry.file);
            fs::read(&path).map_err(|e| PeoError::io(&path, e))
        })
    }

    fn from_parts(manifest: ToyManifest, read: impl Fn(&str) -> Result<Vec<u8>>) -> Result<Self> {
        if manifest.layout != MATRIX_LAYOUT {
            return Err(PeoError::Fixture(format!(
                "unsupported layout `{}`",
                manifest.layout
            )));
        }
        if manifest.text_encoder.encoder_salts.is_empty() {
            return Err(PeoError::Fixture("manifest lists no encoder salts".into()));
        }
        let pixels = manifest.image_side * manifest.image_side;
        let dim = manifest.dim;
        let load = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
            let entry = manifest
                .matrices
                .get(name)
                .ok_or_else(|| PeoError::Fixture(format!("manifest lacks matrix `{name}`")))?;
            if (entry.rows, entry.cols) != (rows, cols) {
                return Err(PeoError::Fixture(format!(
                    "{name}: manifest shape {}x{} but expected {rows}x{cols}",
                    entry.rows, entry.cols
                )));
            }
            matrix_from_bytes(name, entry, &read(name)?)
        };
        let w_gen = load("w_gen", pixels, dim)?;
        let w_img = load("w_img", dim, pixels)?;
        let v_aes = load("v_aes", pixels, 1)?;
        Ok(Self {
            manifest,
            w_gen,
            w_img,
            v_aes,
        })
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn image_side(&self) -> usize {
        self.manifest.image_side
    }

    pub fn pixel_count(&self) -> usize {
        self.image_side() * self.image_side()
    }

    pub fn encoder_salts(&self) -> &[HexU64] {
        &self.manifest.text_encoder.encoder_salts
    }

    /// The text-encoder recurrence on raw bytes (empty input allowed; that is
    /// how the unconditional embedding is produced).
    pub fn encode_bytes(&self, bytes: &[u8], salt: u64) -> Vec<f64> {
        let c = &self.manifest.text_encoder;
        let mut h = c.fnv_offset.0;
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(c.fnv_prime.0);
        }
        h ^= salt;
        let raw: Vec<f64> = (0..self.dim())
            .map(|i| {
                let state = h.wrapping_add((i as u64 + 1).wrapping_mul(c.gamma.0));
                signed_unit(splitmix_finalize(state, c.mix1.0, c.mix2.0))
            })
            .collect();
        let n = norm(&raw);
        raw.into_iter().map(|x| x / n).collect()
    }

    fn check_dim(&self, context: &'static str, len: usize, expected: usize) -> Result<()> {
        if len != expected {
            return Err(PeoError::DimensionMismatch {
                context,
                expected,
                actual: len,
            });
        }
        Ok(())
    }

    pub fn generate_pixels(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_dim("toy generator input", theta.len(), self.dim())?;
        Ok(matvec(&self.w_gen, self.pixel_count(), self.dim(), theta)
            .into_iter()
            .map(logistic)
            .collect())
    }

    pub fn image_features(&self, pixels: &[f64]) -> Result<Vec<f64>> {
        self.check_dim("toy image encoder input", pixels.len(), self.pixel_count())?;
        let y = matvec(&self.w_img, self.dim(), self.pixel_count(), pixels);
        let n = norm(&y);
        if n == 0.0 {
            return Err(PeoError::ZeroNorm {
                argument: "image features",
            });
        }
        Ok(y.into_iter().map(|v| v / n).collect())
    }

    /// `v_aes · pixels`.
    pub fn aesthetic_logit(&self, pixels: &[f64]) -> Result<f64> {
        self.check_dim("toy aesthetic input", pixels.len(), self.pixel_count())?;
        Ok(dot(&self.v_aes, pixels))
    }
}

pub fn toy_text_encode(params: &ToyParams, prompt: &str) -> Result<PromptEmbedding> {
    if prompt.is_empty() {
        return Err(PeoError::InvalidInput("prompt must not be empty".into()));
    }
    let salt = params.encoder_salts()[0].0;
    PromptEmbedding::single(encoder_id(0), params.encode_bytes(prompt.as_bytes(), salt))
}

pub fn toy_generate(params: &ToyParams, theta: &[f64]) -> Result<GeneratedImage> {
    let pixels = params.generate_pixels(theta)?;
    let side = params.image_side() as u32;
    GeneratedImage::new(
        params.image_side(),
        params.image_side(),
        1,
        pixels,
        Provenance {
            backbone_id: "toy".into(),
            settings: toy_default_settings(side),
            step: None,
            denoise_evaluations: 1,
        },
    )
}

pub fn toy_image_encode(params: &ToyParams, image: &GeneratedImage) -> Result<ImageFeatures> {
    ImageFeatures::new(params.image_features(image.pixels())?)
}

pub fn toy_aesthetic(params: &ToyParams, image: &GeneratedImage) -> Result<f64> {
    Ok(10.0 * logistic(params.aesthetic_logit(image.pixels())?))
}

/// Central differences, one coordinate at a time.
pub fn finite_difference_gradient<F>(f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let plus = f(&probe)?;
        probe[i] = theta[i] - h;
        let minus = f(&probe)?;
        probe[i] = theta[i];
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(PeoError::NonFinite(format!(
                "function value near coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

fn encoder_id(k: usize) -> String {
    format!("toy-text-{k}")
}

fn toy_default_settings(side: u32) -> GenerationSettings {
    GenerationSettings {
        sampler_name: "toy".into(),
        sampling_steps: 1,
        guidance_scale: 0.0,
        differentiated_steps: 1,
        height: side,
        width: side,
        seed: 0,
    }
}

/// The toy functions behind the [`Backbone`] contract.
///
/// With several encoders the generator conditions on the mean of the encoder
/// vectors and every encoder shares the same image-feature space. With
/// guidance enabled the conditioning becomes
/// `θ_uncond + g · (θ_cond − θ_uncond)`.
#[derive(Debug, Clone)]
pub struct ToyBackbone {
    id: String,
    params: Arc<ToyParams>,
    encoders: usize,
    aesthetic_gain: f64,
    unconditional: PromptEmbedding,
}

impl ToyBackbone {
    pub fn new(params: Arc<ToyParams>, encoders: usize) -> Result<Self> {
        let available = params.encoder_salts().len();
        if encoders == 0 || encoders > available {
            return Err(PeoError::InvalidConfig(format!(
                "toy backbone supports 1..={available} encoders, got {encoders}"
            )));
        }
        let vectors = params.encoder_salts()[..encoders]
            .iter()
            .map(|salt| params.encode_bytes(b"", salt.0))
            .collect();
        let unconditional = PromptEmbedding::new(vectors, (0..encoders).map(encoder_id).collect())?;
        Ok(Self {
            id: if encoders == 1 {
                "toy".into()
            } else {
                "toy-dual".into()
            },
            params,
            encoders,
            aesthetic_gain: 1.0,
            unconditional,
        })
    }

    pub fn builtin() -> Result<Self> {
        Self::new(Arc::new(ToyParams::builtin()?), 1)
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = id.to_string();
        self
    }

    /// Multiply the aesthetic logit; large gains saturate the scorer.
    pub fn with_aesthetic_gain(mut self, gain: f64) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(PeoError::InvalidConfig(format!(
                "aesthetic_gain = {gain} must be positive"
            )));
        }
        self.aesthetic_gain = gain;
        Ok(self)
    }

    pub fn params(&self) -> &ToyParams {
        &self.params
    }

    fn check_theta(&self, theta: &PromptEmbedding) -> Result<()> {
        self.unconditional.ensure_same_structure(theta)
    }

    fn check_settings(&self, settings: &GenerationSettings) -> Result<()> {
        let side = self.params.image_side();
        if settings.height as usize != side || settings.width as usize != side {
            return Err(PeoError::DimensionMismatch {
                context: "toy image side",
                expected: side,
                actual: settings.height.max(settings.width) as usize,
            });
        }
        Ok(())
    }

    /// The generator input and `d input / d θ_k` (a scalar multiple of identity).
    fn conditioning(
        &self,
        theta: &PromptEmbedding,
        settings: &GenerationSettings,
    ) -> (Vec<f64>, f64) {
        let k = self.encoders as f64;
        let mean = |e: &PromptEmbedding| -> Vec<f64> {
            let mut acc = vec![0.0; self.params.dim()];
            for v in e.vectors() {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
            }
            acc.into_iter().map(|a| a / k).collect()
        };
        let cond = mean(theta);
        if settings.uses_guidance() {
            let g = settings.guidance_scale;
            let uncond = mean(&self.unconditional);
            let mixed = uncond
                .iter()
                .zip(&cond)
                .map(|(u, c)| u + g * (c - u))
                .collect();
            (mixed, g / k)
        } else {
            (cond, 1.0 / k)
        }
    }

    fn check_image(&self, image: &GeneratedImage) -> Result<()> {
        if image.pixels().len() != self.params.pixel_count() || image.channels != 1 {
            return Err(PeoError::DimensionMismatch {
                context: "toy image",
                expected: self.params.pixel_count(),
                actual: image.pixels().len(),
            });
        }
        Ok(())
    }
}

impl Backbone for ToyBackbone {
    fn id(&self) -> &str {
        &self.id
    }

    fn encoder_count(&self) -> usize {
        self.encoders
    }

    fn concurrent_safe(&self) -> bool {
        true
    }

    fn default_settings(&self) -> GenerationSettings {
        toy_default_settings(self.params.image_side() as u32)
    }

    fn text_encode(&self, prompt: &str) -> Result<PromptEmbedding> {
        if prompt.is_empty() {
            return Err(PeoError::InvalidInput("prompt must not be empty".into()));
        }
        let vectors = self.params.encoder_salts()[..self.encoders]
            .iter()
            .map(|salt| self.params.encode_bytes(prompt.as_bytes(), salt.0))
            .collect();
        PromptEmbedding::new(vectors, (0..self.encoders).map(encoder_id).collect())
    }

    fn unconditional_embedding(&self) -> &PromptEmbedding {
        &self.unconditional
    }

    fn generate(
        &self,
        theta: &PromptEmbedding,
        settings: &GenerationSettings,
    ) -> Result<GeneratedImage> {
        self.check_theta(theta)?;
        self.check_settings(settings)?;
        let (input, _) = self.conditioning(theta, settings);
        let pixels = self.params.generate_pixels(&input)?;
        let side = self.params.image_side();
        GeneratedImage::new(
            side,
            side,
            1,
            pixels,
            Provenance {
                backbone_id: self.id.clone(),
                settings: settings.clone(),
                step: None,
                denoise_evaluations: settings.denoise_evaluations(),
            },
        )
    }

    fn image_encode(&self, image: &GeneratedImage) -> Result<Vec<ImageFeatures>> {
        self.check_image(image)?;
        let f = ImageFeatures::new(self.params.image_features(image.pixels())?)?;
        Ok(vec![f; self.encoders])
    }

    fn aesthetic_score(&self, image: &GeneratedImage) -> Result<f64> {
        self.check_image(image)?;
        Ok(10.0 * logistic(self.aesthetic_gain * self.params.aesthetic_logit(image.pixels())?))
    }

    fn aesthetic_score_vjp(&self, image: &GeneratedImage, cotangent: f64) -> Result<Vec<f64>> {
        self.check_image(image)?;
        let s = logistic(self.aesthetic_gain * self.params.aesthetic_logit(image.pixels())?);
        let scale = cotangent * 10.0 * s * (1.0 - s) * self.aesthetic_gain;
        Ok(self.params.v_aes.iter().map(|v| scale * v).collect())
    }

    fn image_encode_vjp(
        &self,
        image: &GeneratedImage,
        cotangents: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        self.check_image(image)?;
        if cotangents.len() != self.encoders {
            return Err(PeoError::StructureMismatch(format!(
                "{} feature cotangents for {} encoders",
                cotangents.len(),
                self.encoders
            )));
        }
        let dim = self.params.dim();
        let pixels = self.params.pixel_count();
        let mut c = vec![0.0; dim];
        for ct in cotangents {
            self.params.check_dim("feature cotangent", ct.len(), dim)?;
            for (a, x) in c.iter_mut().zip(ct) {
                *a += x;
            }
        }
        let y = matvec(&self.params.w_img, dim, pixels, image.pixels());
        let n = norm(&y);
        if n == 0.0 {
            return Err(PeoError::ZeroNorm {
                argument: "image features",
            });
        }
        // d(y/|y|)ᵀ c = (c − f (f·c)) / |y|
        let f: Vec<f64> = y.iter().map(|v| v / n).collect();
        let fc = dot(&f, &c);
        let gy: Vec<f64> = c
            .iter()
            .zip(&f)
            .map(|(ci, fi)| (ci - fi * fc) / n)
            .collect();
        Ok(matvec_t(&self.params.w_img, dim, pixels, &gy))
    }

    fn generate_vjp(
        &self,
        theta: &PromptEmbedding,
        settings: &GenerationSettings,
        pixel_cotangent: &[f64],
    ) -> Result<Gradient> {
        self.check_theta(theta)?;
        self.check_settings(settings)?;
        let pixels = self.params.pixel_count();
        self.params
            .check_dim("pixel cotangent", pixel_cotangent.len(), pixels)?;
        let (input, factor) = self.conditioning(theta, settings);
        let p = self.params.generate_pixels(&input)?;
        let gz: Vec<f64> = pixel_cotangent
            .iter()
            .zip(&p)
            .map(|(c, pi)| c * pi * (1.0 - pi))
            .collect();
        let g_input = matvec_t(&self.params.w_gen, pixels, self.params.dim(), &gz);
        let per_encoder: Vec<f64> = g_input.into_iter().map(|g| g * factor).collect();
        Ok(Gradient(vec![per_encoder; self.encoders]))
    }
}
