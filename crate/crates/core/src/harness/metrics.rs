//! Per-image metrics and mean/variance aggregation.
//!
//! Text-image agreement is always measured against the original prompt, not
//! the optimized embedding. The CLIP-style score is the raw cosine with no
//! rescaling, and the reported spread is the population variance.

use serde::{Deserialize, Serialize};

use crate::backbone::{encode_prompt, Backbone, GeneratedImage};
use crate::error::{PeoError, Result};
use crate::objective::{cosine_similarity, normalize_aesthetic};

/// A pluggable human-preference scorer (HPS-style).
pub trait PreferenceScorer: Send + Sync {
    fn id(&self) -> &str;

    fn score(&self, image: &GeneratedImage, prompt: &str) -> Result<f64>;
}

/// Scorers used by [`compute_metrics`]. The backbone supplies the aesthetic
/// scorer and both encoders.
#[derive(Clone, Copy)]
pub struct Scorers<'a> {
    pub backbone: &'a dyn Backbone,
    pub preference: Option<&'a dyn PreferenceScorer>,
}

impl<'a> Scorers<'a> {
    pub fn new(backbone: &'a dyn Backbone) -> Self {
        Self {
            backbone,
            preference: None,
        }
    }

    pub fn with_preference(mut self, scorer: &'a dyn PreferenceScorer) -> Self {
        self.preference = Some(scorer);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub aes_norm: f64,
    /// `None` when no preference scorer is configured.
    pub hps: Option<f64>,
    pub clip_cos: f64,
}

/// Score one image against the prompt it was generated from.
///
/// `clip_cos` averages, over encoders, the cosine between the image features
/// and the prompt's own text embedding.
pub fn compute_metrics(
    image: &GeneratedImage,
    initial_prompt: &str,
    scorers: Scorers<'_>,
) -> Result<MetricValues> {
    let backbone = scorers.backbone;
    let raw = backbone
        .aesthetic_score(image)
        .map_err(|e| PeoError::Scorer(format!("aesthetic: {e}")))?;
    let aes_norm =
        normalize_aesthetic(raw).map_err(|e| PeoError::Scorer(format!("aesthetic: {e}")))?;

    let text = encode_prompt(initial_prompt, backbone)?;
    let features = backbone
        .image_encode(image)
        .map_err(|e| PeoError::Scorer(format!("image encoder: {e}")))?;
    if features.len() != text.encoder_count() {
        return Err(PeoError::StructureMismatch(format!(
            "{} image feature vectors for {} text encoders",
            features.len(),
            text.encoder_count()
        )));
    }
    let mut clip = 0.0;
    for (f, t) in features.iter().zip(text.vectors()) {
        clip += cosine_similarity(f.as_slice(), t)?;
    }
    let clip_cos = clip / features.len() as f64;

    let hps = match scorers.preference {
        Some(s) => {
            let v = s
                .score(image, initial_prompt)
                .map_err(|e| PeoError::Scorer(format!("{}: {e}", s.id())))?;
            if !v.is_finite() {
                return Err(PeoError::Scorer(format!("{} returned {v}", s.id())));
            }
            Some(v)
        }
        None => None,
    };
    Ok(MetricValues {
        aes_norm,
        hps,
        clip_cos,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population variance (divisor `n`).
    pub variance: f64,
    pub n: usize,
}

/// Mean and population variance, summed in input order.
pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(PeoError::EmptyAggregate);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PeoError::NonFinite("aggregate input".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Aggregate {
        mean,
        variance,
        n: values.len(),
    })
}
