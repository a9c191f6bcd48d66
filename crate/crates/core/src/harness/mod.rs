//! Evaluation harness: prompt sets, metrics, experiment plans and report
//! bundles.

pub mod bundle;
pub mod metrics;
pub mod plan;
pub mod prompts;
pub mod run;
pub mod simplify;

pub use bundle::{write_bundle, write_metadata, SCHEMA_VERSION};
pub use metrics::{aggregate, compute_metrics, Aggregate, MetricValues, PreferenceScorer, Scorers};
pub use plan::{ExperimentKind, ExperimentPlan, PlanBase, Variant};
pub use prompts::{load_prompt_set, PromptOrigin, PromptSet};
pub use run::{derive_seed, run_experiment, ExperimentReport, RowStatus, RunRow, VariantStatus};
pub use simplify::{simplify_prompt_set, CompletionClient, SIMPLIFY_QUERY};
