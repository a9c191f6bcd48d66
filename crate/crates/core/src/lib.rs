//! Prompt embedding optimization (PEO) for text-to-image backbones.
//!
//! Given a prompt, its text embedding is refined by gradient ascent on a
//! weighted objective: the aesthetic score of the generated image, the
//! agreement between image features and the embedding, and the similarity
//! between the embedding and its initial value. The backbone stays frozen.
//!
//! * [`objective`]: the three terms and their combination
//! * [`optimizer`]: GD / Adam / AdamW ascent, stopping rule, traces, failure detection
//! * [`backbone`]: the pluggable backbone contract, presets and registry
//! * [`toy`]: a deterministic, analytically differentiable reference backbone
//! * [`harness`]: prompt sets, metrics and experiment plans

pub mod backbone;
pub mod error;
pub mod harness;
pub mod objective;
pub mod optimizer;
pub mod toy;
mod vecmath;

pub use backbone::{
    capability_check, encode_prompt, generate_image, Backbone, BackboneRegistry, GeneratedImage,
    GenerationSettings, Preset,
};
pub use error::{PeoError, Result};
pub use objective::{
    adherence_term, cosine_similarity, evaluate_objective, normalize_aesthetic, preservation_term,
    Gradient, ImageFeatures, ObjectiveBreakdown, ObjectiveWeights, PromptEmbedding,
};
pub use optimizer::{
    ascent_update, detect_failure, peo_optimize, Algorithm, FailureKind, OptimizationState,
    OptimizationTrace, OptimizerConfig, PeoOutcome, TerminationReason,
};
pub use toy::{ToyBackbone, ToyParams};
