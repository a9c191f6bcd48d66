//! Gradient ascent on the conditional prompt embedding.
//!
//! Each step generates an image from the current embedding, scores it,
//! pulls the objective gradient back through the backbone and takes one
//! ascent step. The loop ends after `max_steps` updates, when the objective
//! stops improving on the running best, or when a non-finite value shows up.
//! The best embedding seen (the initial one included) is returned.

use serde::{Deserialize, Serialize};

use crate::backbone::{generate_image, Backbone, GeneratedImage, GenerationSettings};
use crate::error::{PeoError, Result};
use crate::objective::{
    evaluate_objective, objective_partials, Gradient, ObjectiveBreakdown, ObjectiveWeights,
    PromptEmbedding,
};

/// Improvement below this does not count as an increase.
pub const NO_INCREASE_TOLERANCE: f64 = 1e-6;

/// Default high-start threshold on the normalized aesthetic term.
pub const AESTHETIC_CEILING: f64 = 0.65;

/// A run whose aesthetic term improves less than this counts as flat.
pub const CEILING_MIN_IMPROVEMENT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gd,
    Adam,
    Adamw,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gd" | "sgd" => Ok(Self::Gd),
            "adam" => Ok(Self::Adam),
            "adamw" => Ok(Self::Adamw),
            other => Err(PeoError::InvalidConfig(format!(
                "unknown optimizer `{other}` (expected gd, adam or adamw)"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Gd => "gd",
            Self::Adam => "adam",
            Self::Adamw => "adamw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, AdamW only.
    pub weight_decay: f64,
    /// Optional gradient-norm clip; off by default.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Adam,
            learning_rate: 0.01,
            max_steps: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PeoError::InvalidConfig(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            ));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad(format!("beta1 = {} must lie in (0, 1)", self.beta1));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad(format!("beta2 = {} must lie in (0, 1)", self.beta2));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad(format!("eps = {} must be positive", self.eps));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!(
                "weight_decay = {} must be nonnegative",
                self.weight_decay
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("clip_norm = {c} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationState {
    pub theta: PromptEmbedding,
    pub first_moment: Gradient,
    pub second_moment: Gradient,
    pub step: usize,
    pub best_theta: PromptEmbedding,
    pub best_total: f64,
}

impl OptimizationState {
    pub fn new(theta_init: PromptEmbedding) -> Self {
        Self {
            first_moment: Gradient::zeros_like(&theta_init),
            second_moment: Gradient::zeros_like(&theta_init),
            step: 0,
            best_theta: theta_init.clone(),
            best_total: f64::NEG_INFINITY,
            theta: theta_init,
        }
    }

    /// Record the objective at the current θ; returns whether it is a new best.
    pub fn observe(&mut self, total: f64) -> bool {
        if total > self.best_total {
            self.best_total = total;
            self.best_theta = self.theta.clone();
            true
        } else {
            false
        }
    }
}

/// One ascent step. On a non-finite gradient, or an update that would leave
/// θ invalid, the state is left untouched and an error is returned.
pub fn ascent_update(
    state: &mut OptimizationState,
    gradient: &Gradient,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if !gradient.matches(&state.theta) {
        return Err(PeoError::StructureMismatch(
            "gradient shape does not match the embedding".into(),
        ));
    }
    if !gradient.is_finite() {
        return Err(PeoError::NonFinite("gradient".into()));
    }
    let lr = cfg.learning_rate;
    let t = state.step + 1;
    let mut m = state.first_moment.clone();
    let mut v = state.second_moment.clone();
    let mut theta: Vec<Vec<f64>> = state.theta.vectors().to_vec();

    match cfg.algorithm {
        Algorithm::Gd => {
            for (th, g) in theta.iter_mut().zip(gradient.parts()) {
                for (x, gi) in th.iter_mut().zip(g) {
                    *x += lr * gi;
                }
            }
        }
        Algorithm::Adam | Algorithm::Adamw => {
            let decay = if cfg.algorithm == Algorithm::Adamw {
                lr * cfg.weight_decay
            } else {
                0.0
            };
            let bc1 = 1.0 - cfg.beta1.powi(t as i32);
            let bc2 = 1.0 - cfg.beta2.powi(t as i32);
            for (((th, g), mk), vk) in theta
                .iter_mut()
                .zip(gradient.parts())
                .zip(m.0.iter_mut())
                .zip(v.0.iter_mut())
            {
                for (((x, gi), mi), vi) in
                    th.iter_mut().zip(g).zip(mk.iter_mut()).zip(vk.iter_mut())
                {
                    *x -= decay * *x;
                    *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                    *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *x += lr * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
        }
    }

    let theta = state.theta.with_vectors(theta)?;
    state.theta = theta;
    state.first_moment = m;
    state.second_moment = v;
    state.step = t;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: ObjectiveBreakdown,
    pub gradient: Gradient,
    pub image: GeneratedImage,
}

pub fn evaluate_objective_only(
    backbone: &dyn Backbone,
    settings: &GenerationSettings,
    theta: &PromptEmbedding,
    theta_init: &PromptEmbedding,
    weights: &ObjectiveWeights,
) -> Result<ObjectiveBreakdown> {
    let image = generate_image(theta, settings, backbone)?;
    let raw = backbone.aesthetic_score(&image)?;
    let features = backbone.image_encode(&image)?;
    evaluate_objective(raw, &features, theta, theta_init, weights)
}

/// Objective value and its full gradient with respect to θ, including the
/// path through the generated image.
pub fn evaluate_with_gradient(
    backbone: &dyn Backbone,
    settings: &GenerationSettings,
    theta: &PromptEmbedding,
    theta_init: &PromptEmbedding,
    weights: &ObjectiveWeights,
) -> Result<Evaluation> {
    let image = generate_image(theta, settings, backbone)?;
    let raw = backbone.aesthetic_score(&image)?;
    let features = backbone.image_encode(&image)?;
    let breakdown = evaluate_objective(raw, &features, theta, theta_init, weights)?;
    let partials = objective_partials(raw, &features, theta, theta_init, weights)?;

    let mut pixel_ct = backbone.aesthetic_score_vjp(&image, partials.d_raw)?;
    let from_features = backbone.image_encode_vjp(&image, &partials.d_features)?;
    if from_features.len() != pixel_ct.len() {
        return Err(PeoError::DimensionMismatch {
            context: "pixel cotangent",
            expected: pixel_ct.len(),
            actual: from_features.len(),
        });
    }
    for (a, b) in pixel_ct.iter_mut().zip(&from_features) {
        *a += b;
    }
    let mut gradient = backbone.generate_vjp(theta, settings, &pixel_ct)?;
    if !gradient.matches(theta) {
        return Err(PeoError::StructureMismatch(format!(
            "backbone `{}` returned a gradient shaped unlike θ",
            backbone.id()
        )));
    }
    gradient.add_assign(&partials.d_theta);
    Ok(Evaluation {
        breakdown,
        gradient,
        image,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TerminationReason {
    MaxSteps,
    NoIncrease,
    Diverged,
}

impl TerminationReason {
    pub fn label(self) -> &'static str {
        match self {
            Self::MaxSteps => "MAX_STEPS",
            Self::NoIncrease => "NO_INCREASE",
            Self::Diverged => "DIVERGED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub breakdown: ObjectiveBreakdown,
    /// `‖θ_t − θ_init‖`
    pub embedding_shift: f64,
    pub gradient_norm: f64,
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub records: Vec<StepRecord>,
    pub termination_reason: TerminationReason,
}

impl OptimizationTrace {
    pub fn initial(&self) -> Option<&StepRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn best_total(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.breakdown.total)
            .fold(None, |acc, t| Some(acc.map_or(t, |a: f64| a.max(t))))
    }
}

#[derive(Debug, Clone)]
pub struct PeoOutcome {
    pub theta_star: PromptEmbedding,
    pub best_total: f64,
    pub trace: OptimizationTrace,
    /// Image generated from `theta_star`.
    pub best_image: GeneratedImage,
}

/// Called with each step index and its image; may return an artifact path to
/// store in the trace.
pub type StepObserver<'a> = dyn FnMut(usize, &GeneratedImage) -> Result<Option<String>> + 'a;

pub fn peo_optimize(
    theta_init: &PromptEmbedding,
    backbone: &dyn Backbone,
    settings: &GenerationSettings,
    weights: &ObjectiveWeights,
    cfg: &OptimizerConfig,
) -> Result<PeoOutcome> {
    peo_optimize_observed(theta_init, backbone, settings, weights, cfg, &mut |_, _| {
        Ok(None)
    })
}

fn is_numeric_failure(e: &PeoError) -> bool {
    matches!(e, PeoError::NonFinite(_) | PeoError::ZeroNorm { .. })
}

pub fn peo_optimize_observed(
    theta_init: &PromptEmbedding,
    backbone: &dyn Backbone,
    settings: &GenerationSettings,
    weights: &ObjectiveWeights,
    cfg: &OptimizerConfig,
    observer: &mut StepObserver<'_>,
) -> Result<PeoOutcome> {
    weights.validate()?;
    cfg.validate()?;
    settings.validate()?;
    if theta_init.encoder_count() != backbone.encoder_count() {
        return Err(PeoError::StructureMismatch(format!(
            "backbone `{}` expects {} encoder vectors, embedding has {}",
            backbone.id(),
            backbone.encoder_count(),
            theta_init.encoder_count()
        )));
    }
    let uncond_before = backbone.unconditional_embedding().checksum();

    let mut state = OptimizationState::new(theta_init.clone());
    let mut records = Vec::with_capacity(cfg.max_steps + 1);

    let mut eval = evaluate_with_gradient(backbone, settings, theta_init, theta_init, weights)?;
    if !eval.breakdown.is_finite() {
        return Err(PeoError::NonFinite(
            "objective at the initial embedding".into(),
        ));
    }
    eval.image.provenance.step = Some(0);
    records.push(StepRecord {
        t: 0,
        breakdown: eval.breakdown,
        embedding_shift: 0.0,
        gradient_norm: eval.gradient.norm(),
        image: observer(0, &eval.image)?,
    });
    state.observe(eval.breakdown.total);
    let mut best_image = eval.image.clone();
    let mut termination = TerminationReason::MaxSteps;

    for t in 1..=cfg.max_steps {
        let mut gradient = eval.gradient.clone();
        if let Some(clip) = cfg.clip_norm {
            let n = gradient.norm();
            if n > clip {
                gradient.scale(clip / n);
            }
        }
        match ascent_update(&mut state, &gradient, cfg) {
            Ok(()) => {}
            Err(e) if is_numeric_failure(&e) => {
                termination = TerminationReason::Diverged;
                break;
            }
            Err(e) => return Err(e),
        }
        eval = match evaluate_with_gradient(backbone, settings, &state.theta, theta_init, weights) {
            Ok(e) if e.breakdown.is_finite() => e,
            Ok(_) => {
                termination = TerminationReason::Diverged;
                break;
            }
            Err(e) if is_numeric_failure(&e) => {
                termination = TerminationReason::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        eval.image.provenance.step = Some(t);
        let previous_best = state.best_total;
        let total = eval.breakdown.total;
        records.push(StepRecord {
            t,
            breakdown: eval.breakdown,
            embedding_shift: state.theta.distance(theta_init)?,
            gradient_norm: eval.gradient.norm(),
            image: observer(t, &eval.image)?,
        });
        if state.observe(total) {
            best_image = eval.image.clone();
        }
        if total <= previous_best + NO_INCREASE_TOLERANCE {
            termination = TerminationReason::NoIncrease;
            break;
        }
    }

    if backbone.unconditional_embedding().checksum() != uncond_before {
        return Err(PeoError::Backbone(format!(
            "backbone `{}` modified its unconditional embedding",
            backbone.id()
        )));
    }

    Ok(PeoOutcome {
        theta_star: state.best_theta,
        best_total: state.best_total,
        trace: OptimizationTrace {
            records,
            termination_reason: termination,
        },
        best_image,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureKind {
    Ok,
    Diverged,
    Ceiling,
}

impl FailureKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Ok => "OK",
            Self::Diverged => "DIVERGED",
            Self::Ceiling => "CEILING",
        }
    }
}

/// Classify a finished run.
///
/// `Diverged` when the run ended on a non-finite value or its last recorded
/// total is below the initial one. `Ceiling` when the run started above
/// `aesthetic_ceiling` on the normalized aesthetic term and never improved it
/// by [`CEILING_MIN_IMPROVEMENT`].
pub fn detect_failure(trace: &OptimizationTrace, aesthetic_ceiling: f64) -> FailureKind {
    let (Some(first), Some(last)) = (trace.initial(), trace.last()) else {
        return FailureKind::Ok;
    };
    if trace.termination_reason == TerminationReason::Diverged
        || last.breakdown.total < first.breakdown.total
    {
        return FailureKind::Diverged;
    }
    let l1_start = first.breakdown.l1;
    let max_gain = trace
        .records
        .iter()
        .map(|r| r.breakdown.l1 - l1_start)
        .fold(0.0, f64::max);
    if l1_start > aesthetic_ceiling && max_gain < CEILING_MIN_IMPROVEMENT {
        return FailureKind::Ceiling;
    }
    FailureKind::Ok
}

/// The per-run JSON document written next to generated images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceDocument {
    pub backbone: String,
    pub prompt: Option<String>,
    pub weights: ObjectiveWeights,
    pub optimizer: OptimizerConfig,
    pub settings: GenerationSettings,
    pub best_total: f64,
    pub failure: FailureKind,
    #[serde(flatten)]
    pub trace: OptimizationTrace,
}
