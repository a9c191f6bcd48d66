//! The composite prompt-embedding objective.
//!
//! Three terms are combined with nonnegative weights:
//!
//! | term  | meaning                                              | range    |
//! |-------|------------------------------------------------------|----------|
//! | `l1`  | aesthetic score of the generated image, scaled to 0–1 | `[0, 1]` |
//! | `l2`  | cosine between image features and the embedding       | `[-1, 1]`|
//! | `l_ppt` | cosine between the initial and current embedding    | `[-1, 1]`|
//!
//! `total = w1·l1 + w2·l2 + w3·l_ppt`. For backbones with several text
//! encoders the two cosine terms are averaged over encoder pairs.
//!
//! Reported values use the strict cosine definition (zero norms are errors).
//! The partial derivatives used during optimization add [`GRAD_EPS`] to
//! denominators.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PeoError, Result};
use crate::vecmath::{all_finite, dot, norm};

/// Denominator offset used on the differentiable path only.
pub const GRAD_EPS: f64 = 1e-12;

/// Upper end of the raw aesthetic scale.
pub const AESTHETIC_SCALE: f64 = 10.0;

/// The text embedding under optimization: one vector per text encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    vectors: Vec<Vec<f64>>,
    encoder_ids: Vec<String>,
}

impl PromptEmbedding {
    pub fn new(vectors: Vec<Vec<f64>>, encoder_ids: Vec<String>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(PeoError::InvalidInput(
                "embedding needs at least one encoder vector".into(),
            ));
        }
        if vectors.len() != encoder_ids.len() {
            return Err(PeoError::StructureMismatch(format!(
                "{} vectors but {} encoder ids",
                vectors.len(),
                encoder_ids.len()
            )));
        }
        for (v, id) in vectors.iter().zip(&encoder_ids) {
            if v.is_empty() {
                return Err(PeoError::InvalidInput(format!(
                    "encoder `{id}` vector is empty"
                )));
            }
            if !all_finite(v) {
                return Err(PeoError::NonFinite(format!("embedding for encoder `{id}`")));
            }
            if norm(v) == 0.0 {
                return Err(PeoError::ZeroNorm {
                    argument: "embedding",
                });
            }
        }
        Ok(Self {
            vectors,
            encoder_ids,
        })
    }

    pub fn single(encoder_id: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        Self::new(vec![vector], vec![encoder_id.into()])
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn encoder_ids(&self) -> &[String] {
        &self.encoder_ids
    }

    pub fn encoder_count(&self) -> usize {
        self.vectors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.vectors.iter().map(Vec::len).collect()
    }

    /// Replace the vectors, keeping encoder ids. The new vectors must keep
    /// the same shape and satisfy the usual invariants.
    pub fn with_vectors(&self, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.len() != self.vectors.len() {
            return Err(PeoError::StructureMismatch(format!(
                "expected {} vectors, got {}",
                self.vectors.len(),
                vectors.len()
            )));
        }
        for (old, new) in self.vectors.iter().zip(&vectors) {
            if old.len() != new.len() {
                return Err(PeoError::DimensionMismatch {
                    context: "embedding update",
                    expected: old.len(),
                    actual: new.len(),
                });
            }
        }
        Self::new(vectors, self.encoder_ids.clone())
    }

    pub fn ensure_same_structure(&self, other: &PromptEmbedding) -> Result<()> {
        if self.encoder_ids != other.encoder_ids || self.dims() != other.dims() {
            return Err(PeoError::StructureMismatch(format!(
                "{:?} {:?} vs {:?} {:?}",
                self.encoder_ids,
                self.dims(),
                other.encoder_ids,
                other.dims()
            )));
        }
        Ok(())
    }

    /// Euclidean distance over the concatenation of all encoder vectors.
    pub fn distance(&self, other: &PromptEmbedding) -> Result<f64> {
        self.ensure_same_structure(other)?;
        let sq: f64 = self
            .vectors
            .iter()
            .zip(&other.vectors)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)))
            .sum();
        Ok(sq.sqrt())
    }

    /// SHA-256 over the little-endian bytes of every component.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.vectors {
            for x in v {
                hasher.update(x.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Image features for one encoder, in the same space as that encoder's text
/// vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    vector: Vec<f64>,
}

impl ImageFeatures {
    pub fn new(vector: Vec<f64>) -> Result<Self> {
        if !all_finite(&vector) {
            return Err(PeoError::NonFinite("image features".into()));
        }
        if vector.is_empty() || norm(&vector) == 0.0 {
            return Err(PeoError::ZeroNorm {
                argument: "image features",
            });
        }
        Ok(Self { vector })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vector
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 0.5,
            w3: 0.5,
        }
    }
}

impl ObjectiveWeights {
    pub fn new(w1: f64, w2: f64, w3: f64) -> Result<Self> {
        let w = Self { w1, w2, w3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !value.is_finite() || value < 0.0 {
                return Err(PeoError::InvalidConfig(format!(
                    "weight {name} = {value} must be a finite nonnegative number"
                )));
            }
        }
        Ok(())
    }

    pub fn combine(&self, l1: f64, l2: f64, l_ppt: f64) -> f64 {
        self.w1 * l1 + self.w2 * l2 + self.w3 * l_ppt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l_ppt: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub fn from_terms(l1: f64, l2: f64, l_ppt: f64, weights: &ObjectiveWeights) -> Self {
        Self {
            l1,
            l2,
            l_ppt,
            total: weights.combine(l1, l2, l_ppt),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l1.is_finite()
            && self.l2.is_finite()
            && self.l_ppt.is_finite()
            && self.total.is_finite()
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PeoError::DimensionMismatch {
            context: "cosine similarity",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (sa, sb) = (dot(a, a), dot(b, b));
    if sa == 0.0 {
        return Err(PeoError::ZeroNorm { argument: "a" });
    }
    if sb == 0.0 {
        return Err(PeoError::ZeroNorm { argument: "b" });
    }
    // sqrt(s·s) == s in binary64, so identical inputs give exactly 1.
    let denom = match (sa * sb).sqrt() {
        d if d.is_normal() => d,
        _ => sa.sqrt() * sb.sqrt(),
    };
    // Rounding can push |cos| a hair past 1 for parallel inputs.
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

/// Map a raw 0–10 aesthetic score onto `[0, 1]`, clamping out-of-range input.
pub fn normalize_aesthetic(raw: f64) -> Result<f64> {
    if raw.is_nan() {
        return Err(PeoError::NonFinite("aesthetic score".into()));
    }
    Ok((raw / AESTHETIC_SCALE).clamp(0.0, 1.0))
}

/// Derivative of [`normalize_aesthetic`]; zero where the clamp is active.
pub fn normalize_aesthetic_derivative(raw: f64) -> f64 {
    if (0.0..=AESTHETIC_SCALE).contains(&raw) {
        1.0 / AESTHETIC_SCALE
    } else {
        0.0
    }
}

fn check_pairing(features: &[ImageFeatures], theta: &PromptEmbedding) -> Result<()> {
    if features.len() != theta.encoder_count() {
        return Err(PeoError::StructureMismatch(format!(
            "{} image feature vectors for {} text encoders",
            features.len(),
            theta.encoder_count()
        )));
    }
    Ok(())
}

/// Mean over encoders of `cos(f_k, θ_k)`.
pub fn adherence_term(features: &[ImageFeatures], theta: &PromptEmbedding) -> Result<f64> {
    check_pairing(features, theta)?;
    let mut sum = 0.0;
    for (f, t) in features.iter().zip(theta.vectors()) {
        sum += cosine_similarity(f.as_slice(), t)?;
    }
    Ok(sum / features.len() as f64)
}

/// Mean over encoders of `cos(θ_init,k, θ_k)`.
pub fn preservation_term(theta_init: &PromptEmbedding, theta: &PromptEmbedding) -> Result<f64> {
    theta_init.ensure_same_structure(theta)?;
    let mut sum = 0.0;
    for (a, b) in theta_init.vectors().iter().zip(theta.vectors()) {
        sum += cosine_similarity(a, b)?;
    }
    Ok(sum / theta.encoder_count() as f64)
}

pub fn evaluate_objective(
    aesthetic_raw: f64,
    features: &[ImageFeatures],
    theta: &PromptEmbedding,
    theta_init: &PromptEmbedding,
    weights: &ObjectiveWeights,
) -> Result<ObjectiveBreakdown> {
    let l1 = normalize_aesthetic(aesthetic_raw)?;
    let l2 = adherence_term(features, theta)?;
    let l_ppt = preservation_term(theta_init, theta)?;
    Ok(ObjectiveBreakdown::from_terms(l1, l2, l_ppt, weights))
}

/// Gradient of `cos(a, b)` with respect to `a`.
///
/// `(b − (a·b / a·a) a) / (‖a‖‖b‖ + ε)`: the projection coefficient is taken
/// without ε so the gradient vanishes exactly when `b` is a positive
/// multiple of `a`.
pub fn cosine_gradient(a: &[f64], b: &[f64]) -> Vec<f64> {
    let aa = dot(a, a);
    let ab = dot(a, b);
    let inv = 1.0 / (aa.sqrt() * norm(b) + GRAD_EPS);
    let proj = if aa > 0.0 { ab / aa } else { 0.0 };
    a.iter()
        .zip(b)
        .map(|(&ai, &bi)| (bi - proj * ai) * inv)
        .collect()
}

/// Per-encoder gradient vectors shaped like a [`PromptEmbedding`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<Vec<f64>>);

impl Gradient {
    pub fn zeros_like(theta: &PromptEmbedding) -> Self {
        Self(theta.vectors().iter().map(|v| vec![0.0; v.len()]).collect())
    }

    pub fn parts(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| dot(v, v)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| all_finite(v))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for x in self.0.iter_mut().flatten() {
            *x *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn matches(&self, theta: &PromptEmbedding) -> bool {
        self.0.len() == theta.encoder_count()
            && self
                .0
                .iter()
                .zip(theta.vectors())
                .all(|(g, t)| g.len() == t.len())
    }
}

/// Partial derivatives of the total with respect to each objective input.
///
/// `d_theta` only covers the explicit dependence of the cosine terms on θ;
/// the dependence through the generated image is carried by `d_raw` and
/// `d_features` and must be pulled back through the backbone.
#[derive(Debug, Clone)]
pub struct ObjectivePartials {
    pub d_raw: f64,
    pub d_features: Vec<Vec<f64>>,
    pub d_theta: Gradient,
}

pub fn objective_partials(
    aesthetic_raw: f64,
    features: &[ImageFeatures],
    theta: &PromptEmbedding,
    theta_init: &PromptEmbedding,
    weights: &ObjectiveWeights,
) -> Result<ObjectivePartials> {
    check_pairing(features, theta)?;
    theta_init.ensure_same_structure(theta)?;
    let k = theta.encoder_count() as f64;
    let adh = weights.w2 / k;
    let ppt = weights.w3 / k;

    let mut d_features = Vec::with_capacity(features.len());
    let mut d_theta = Vec::with_capacity(features.len());
    for ((f, t), t0) in features
        .iter()
        .zip(theta.vectors())
        .zip(theta_init.vectors())
    {
        let f = f.as_slice();
        if f.len() != t.len() {
            return Err(PeoError::DimensionMismatch {
                context: "adherence pairing",
                expected: t.len(),
                actual: f.len(),
            });
        }
        d_features.push(cosine_gradient(f, t).into_iter().map(|g| adh * g).collect());
        let from_adherence = cosine_gradient(t, f);
        let from_ppt = cosine_gradient(t, t0);
        d_theta.push(
            from_adherence
                .iter()
                .zip(&from_ppt)
                .map(|(a, p)| adh * a + ppt * p)
                .collect(),
        );
    }
    Ok(ObjectivePartials {
        d_raw: weights.w1 * normalize_aesthetic_derivative(aesthetic_raw),
        d_features,
        d_theta: Gradient(d_theta),
    })
}
