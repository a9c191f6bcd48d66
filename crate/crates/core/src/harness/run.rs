//! Executing an experiment plan.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{encode_prompt, Backbone, GenerationSettings};
use crate::error::{PeoError, Result};
use crate::harness::metrics::{aggregate, compute_metrics, Aggregate, PreferenceScorer, Scorers};
use crate::harness::plan::{ExperimentKind, ExperimentPlan, Variant};
use crate::harness::prompts::PromptOrigin;
use crate::objective::{preservation_term, ObjectiveWeights};
use crate::optimizer::{
    detect_failure, evaluate_objective_only, peo_optimize, FailureKind, TerminationReason,
    TraceDocument, AESTHETIC_CEILING,
};

const SEED_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Seed for prompt `index`: one splitmix64 step from the global seed.
/// Every variant sees the same seed for the same prompt.
pub fn derive_seed(global_seed: u64, index: usize) -> u64 {
    let mut z = global_seed.wrapping_add((index as u64).wrapping_add(1).wrapping_mul(SEED_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

/// One variant × prompt result. Numeric fields are `None` on failed rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub variant: String,
    pub index: usize,
    pub prompt: String,
    pub seed: u64,
    pub status: RowStatus,
    pub aes_norm: Option<f64>,
    pub hps: Option<f64>,
    pub clip_cos: Option<f64>,
    /// `θ*` scored under the plan's reference weights.
    pub total: Option<f64>,
    /// Best total under the variant's own weights.
    pub variant_total: Option<f64>,
    pub initial_total: Option<f64>,
    pub steps: Option<usize>,
    pub termination: Option<TerminationReason>,
    pub failure: Option<FailureKind>,
    /// `‖θ* − θ_init‖`
    pub embedding_shift: Option<f64>,
    /// `cos(θ*, θ_init)`, averaged over encoders.
    pub preservation: Option<f64>,
    pub error: Option<String>,
}

impl RunRow {
    fn failed(variant: &str, index: usize, prompt: &str, seed: u64, error: &PeoError) -> Self {
        Self {
            variant: variant.into(),
            index,
            prompt: prompt.into(),
            seed,
            status: RowStatus::Failed,
            aes_norm: None,
            hps: None,
            clip_cos: None,
            total: None,
            variant_total: None,
            initial_total: None,
            steps: None,
            termination: None,
            failure: None,
            embedding_shift: None,
            preservation: None,
            error: Some(error.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }
}

/// Files produced by one successful run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub png: Vec<u8>,
    pub trace: TraceDocument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantStatus {
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub ok: usize,
    pub diverged: usize,
    pub ceiling: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub status: VariantStatus,
    pub completed: usize,
    pub failed: usize,
    pub failure_counts: FailureCounts,
    pub aggregates: BTreeMap<String, Aggregate>,
}

#[derive(Debug, Clone)]
pub struct VariantReport {
    pub variant: Variant,
    pub rows: Vec<RunRow>,
    /// Parallel to `rows`; `None` for failed rows.
    pub artifacts: Vec<Option<RunArtifacts>>,
    pub summary: VariantSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSetInfo {
    pub name: String,
    pub origin: PromptOrigin,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub backbone_id: String,
    pub settings: GenerationSettings,
    pub global_seed: u64,
    pub prompt_set: PromptSetInfo,
    pub seeds: Vec<u64>,
    pub reference_weights: ObjectiveWeights,
    /// Id of the preference scorer, if one was configured.
    pub preference_scorer: Option<String>,
    pub variants: Vec<VariantReport>,
}

impl ExperimentReport {
    pub fn is_complete(&self) -> bool {
        self.variants
            .iter()
            .all(|v| v.summary.status == VariantStatus::Complete)
    }

    pub fn failed_rows(&self) -> usize {
        self.variants.iter().map(|v| v.summary.failed).sum()
    }

    pub fn variant(&self, label: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.variant.label == label)
    }
}

/// Metric columns aggregated per variant, in report order.
pub const AGGREGATED_METRICS: [&str; 7] = [
    "aes_norm",
    "hps",
    "clip_cos",
    "total",
    "variant_total",
    "embedding_shift",
    "preservation",
];

fn metric_value(row: &RunRow, metric: &str) -> Option<f64> {
    match metric {
        "aes_norm" => row.aes_norm,
        "hps" => row.hps,
        "clip_cos" => row.clip_cos,
        "total" => row.total,
        "variant_total" => row.variant_total,
        "embedding_shift" => row.embedding_shift,
        "preservation" => row.preservation,
        _ => None,
    }
}

/// Aggregate every metric over the successful rows. A metric is omitted when
/// any successful row lacks it (e.g. `hps` without a scorer).
pub fn summarize(rows: &[RunRow]) -> VariantSummary {
    let ok: Vec<&RunRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let mut counts = FailureCounts::default();
    for r in &ok {
        match r.failure {
            Some(FailureKind::Diverged) => counts.diverged += 1,
            Some(FailureKind::Ceiling) => counts.ceiling += 1,
            _ => counts.ok += 1,
        }
    }
    let mut aggregates = BTreeMap::new();
    for metric in AGGREGATED_METRICS {
        let values: Option<Vec<f64>> = ok.iter().map(|r| metric_value(r, metric)).collect();
        if let Some(Ok(a)) = values.map(|v| aggregate(&v)) {
            aggregates.insert(metric.to_string(), a);
        }
    }
    let failed = rows.len() - ok.len();
    let status = if failed == 0 {
        VariantStatus::Complete
    } else if ok.is_empty() {
        VariantStatus::Failed
    } else {
        VariantStatus::Partial
    };
    VariantSummary {
        status,
        completed: ok.len(),
        failed,
        failure_counts: counts,
        aggregates,
    }
}

struct RunContext<'a> {
    plan: &'a ExperimentPlan,
    backbone: &'a dyn Backbone,
    scorers: Scorers<'a>,
}

impl RunContext<'_> {
    fn run_one(
        &self,
        variant: &Variant,
        index: usize,
        prompt: &str,
        seed: u64,
    ) -> (RunRow, Option<RunArtifacts>) {
        match self.try_run_one(variant, index, prompt, seed) {
            Ok((row, artifacts)) => (row, Some(artifacts)),
            Err(e) => (
                RunRow::failed(&variant.label, index, prompt, seed, &e),
                None,
            ),
        }
    }

    fn try_run_one(
        &self,
        variant: &Variant,
        index: usize,
        prompt: &str,
        seed: u64,
    ) -> Result<(RunRow, RunArtifacts)> {
        let settings = GenerationSettings {
            seed,
            ..self.plan.settings.clone()
        };
        let theta = encode_prompt(prompt, self.backbone)?;
        let outcome = peo_optimize(
            &theta,
            self.backbone,
            &settings,
            &variant.weights,
            &variant.optimizer,
        )?;
        let failure = detect_failure(&outcome.trace, AESTHETIC_CEILING);
        let metrics = compute_metrics(&outcome.best_image, prompt, self.scorers)?;
        let reference = evaluate_objective_only(
            self.backbone,
            &settings,
            &outcome.theta_star,
            &theta,
            &self.plan.reference_weights,
        )?;
        let initial_total = outcome.trace.initial().map(|r| r.breakdown.total);
        let row = RunRow {
            variant: variant.label.clone(),
            index,
            prompt: prompt.into(),
            seed,
            status: RowStatus::Ok,
            aes_norm: Some(metrics.aes_norm),
            hps: metrics.hps,
            clip_cos: Some(metrics.clip_cos),
            total: Some(reference.total),
            variant_total: Some(outcome.best_total),
            initial_total,
            steps: Some(outcome.trace.records.len().saturating_sub(1)),
            termination: Some(outcome.trace.termination_reason),
            failure: Some(failure),
            embedding_shift: Some(outcome.theta_star.distance(&theta)?),
            preservation: Some(preservation_term(&theta, &outcome.theta_star)?),
            error: None,
        };
        let artifacts = RunArtifacts {
            png: outcome.best_image.to_png()?,
            trace: TraceDocument {
                backbone: self.backbone.id().into(),
                prompt: Some(prompt.into()),
                weights: variant.weights,
                optimizer: variant.optimizer.clone(),
                settings,
                best_total: outcome.best_total,
                failure,
                trace: outcome.trace,
            },
        };
        Ok((row, artifacts))
    }
}

/// Run every variant over every prompt.
///
/// Failures are isolated per row: a failing prompt marks its row failed and
/// the rest of the plan still runs. Prompts run in parallel when the backbone
/// is concurrency-safe; results are always ordered by prompt index.
pub fn run_experiment(
    plan: &ExperimentPlan,
    backbone: &dyn Backbone,
    preference: Option<&dyn PreferenceScorer>,
) -> Result<ExperimentReport> {
    plan.validate()?;
    if backbone.id() != plan.backbone_id {
        return Err(PeoError::InvalidConfig(format!(
            "plan targets backbone `{}` but `{}` was supplied",
            plan.backbone_id,
            backbone.id()
        )));
    }
    let mut scorers = Scorers::new(backbone);
    if let Some(p) = preference {
        scorers = scorers.with_preference(p);
    }
    let ctx = RunContext {
        plan,
        backbone,
        scorers,
    };
    let prompts = plan.prompt_set.prompts();
    let seeds: Vec<u64> = (0..prompts.len())
        .map(|i| derive_seed(plan.global_seed, i))
        .collect();

    let mut variants = Vec::with_capacity(plan.variants.len());
    for variant in &plan.variants {
        let run = |(i, prompt): (usize, &String)| ctx.run_one(variant, i, prompt, seeds[i]);
        let results: Vec<(RunRow, Option<RunArtifacts>)> = if backbone.concurrent_safe() {
            prompts.par_iter().enumerate().map(run).collect()
        } else {
            prompts.iter().enumerate().map(run).collect()
        };
        let (rows, artifacts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let summary = summarize(&rows);
        variants.push(VariantReport {
            variant: variant.clone(),
            rows,
            artifacts,
            summary,
        });
    }

    Ok(ExperimentReport {
        kind: plan.kind,
        backbone_id: plan.backbone_id.clone(),
        settings: plan.settings.clone(),
        global_seed: plan.global_seed,
        prompt_set: PromptSetInfo {
            name: plan.prompt_set.name.clone(),
            origin: plan.prompt_set.origin,
            count: plan.prompt_set.len(),
        },
        seeds,
        reference_weights: plan.reference_weights,
        preference_scorer: preference.map(|p| p.id().to_string()),
        variants,
    })
}
