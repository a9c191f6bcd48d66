//! Experiment plans: which (weights, optimizer) variants run over which prompts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backbone::GenerationSettings;
use crate::error::{PeoError, Result};
use crate::harness::prompts::PromptSet;
use crate::objective::ObjectiveWeights;
use crate::optimizer::{Algorithm, OptimizerConfig};

/// Values each weight may take in a grid search.
pub const WEIGHT_GRID_VALUES: [f64; 4] = [0.2, 0.5, 0.7, 1.0];

/// Learning rates every sweep must cover.
pub const REQUIRED_SWEEP_RATES: [f64; 3] = [1e-5, 1e-2, 2e-1];

/// Weights used when comparing optimization algorithms.
pub const OPTIMIZER_CMP_WEIGHTS: ObjectiveWeights = ObjectiveWeights {
    w1: 1.0,
    w2: 1.0,
    w3: 1.0,
};

pub const BASELINE_LABEL: &str = "baseline";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentKind {
    Benchmark,
    Ablation,
    WeightGrid,
    LrSweep,
    OptimizerCmp,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Benchmark => "BENCHMARK",
            Self::Ablation => "ABLATION",
            Self::WeightGrid => "WEIGHT_GRID",
            Self::LrSweep => "LR_SWEEP",
            Self::OptimizerCmp => "OPTIMIZER_CMP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub weights: ObjectiveWeights,
    pub optimizer: OptimizerConfig,
}

impl Variant {
    pub fn new(
        label: impl Into<String>,
        weights: ObjectiveWeights,
        optimizer: OptimizerConfig,
    ) -> Self {
        Self {
            label: label.into(),
            weights,
            optimizer,
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.optimizer.max_steps == 0
    }
}

/// Settings shared by every variant of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanBase {
    pub prompt_set: PromptSet,
    pub backbone_id: String,
    pub settings: GenerationSettings,
    pub weights: ObjectiveWeights,
    pub optimizer: OptimizerConfig,
    pub global_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub variants: Vec<Variant>,
    pub prompt_set: PromptSet,
    pub backbone_id: String,
    pub settings: GenerationSettings,
    pub global_seed: u64,
    /// Weights under which every variant's result is re-scored so totals are
    /// comparable across variants.
    pub reference_weights: ObjectiveWeights,
}

fn baseline(base: &PlanBase, weights: ObjectiveWeights) -> Variant {
    Variant::new(
        BASELINE_LABEL,
        weights,
        OptimizerConfig {
            max_steps: 0,
            ..base.optimizer.clone()
        },
    )
}

fn weight_label(v: f64) -> String {
    format!("{v}")
}

/// `1e-5`, `0.01` → `1e-5`, `1e-2`.
pub fn rate_label(lr: f64) -> String {
    format!("lr={lr:e}")
}

impl ExperimentPlan {
    fn from_base(
        base: PlanBase,
        kind: ExperimentKind,
        variants: Vec<Variant>,
        reference: ObjectiveWeights,
    ) -> Result<Self> {
        let plan = Self {
            kind,
            variants,
            prompt_set: base.prompt_set,
            backbone_id: base.backbone_id,
            settings: base.settings,
            global_seed: base.global_seed,
            reference_weights: reference,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Zero-step baseline against the configured optimizer.
    pub fn benchmark(base: PlanBase) -> Result<Self> {
        let variants = vec![
            baseline(&base, base.weights),
            Variant::new("peo", base.weights, base.optimizer.clone()),
        ];
        let reference = base.weights;
        Self::from_base(base, ExperimentKind::Benchmark, variants, reference)
    }

    /// The four term combinations, all with `w1 = 1` and the configured
    /// `w2`, `w3`.
    pub fn ablation(base: PlanBase) -> Result<Self> {
        let (w2, w3) = (base.weights.w2, base.weights.w3);
        let masks = [
            ("L1", 0.0, 0.0),
            ("L1+L2", w2, 0.0),
            ("L1+PPT", 0.0, w3),
            ("L1+L2+PPT", w2, w3),
        ];
        let variants = masks
            .iter()
            .map(|&(label, a, b)| {
                Ok(Variant::new(
                    label,
                    ObjectiveWeights::new(1.0, a, b)?,
                    base.optimizer.clone(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let reference = ObjectiveWeights::new(1.0, w2, w3)?;
        Self::from_base(base, ExperimentKind::Ablation, variants, reference)
    }

    /// Full Cartesian grid over `values` (each drawn from
    /// [`WEIGHT_GRID_VALUES`]).
    pub fn weight_grid(base: PlanBase, values: &[f64]) -> Result<Self> {
        let values = unique_sorted(values, "weight grid")?;
        if let Some(v) = values.iter().find(|v| !WEIGHT_GRID_VALUES.contains(v)) {
            return Err(PeoError::InvalidConfig(format!(
                "weight grid value {v} is not one of {WEIGHT_GRID_VALUES:?}"
            )));
        }
        let mut variants = Vec::with_capacity(values.len().pow(3));
        for &w1 in &values {
            for &w2 in &values {
                for &w3 in &values {
                    let label = format!(
                        "w1={},w2={},w3={}",
                        weight_label(w1),
                        weight_label(w2),
                        weight_label(w3)
                    );
                    variants.push(Variant::new(
                        label,
                        ObjectiveWeights::new(w1, w2, w3)?,
                        base.optimizer.clone(),
                    ));
                }
            }
        }
        let reference = base.weights;
        Self::from_base(base, ExperimentKind::WeightGrid, variants, reference)
    }

    /// One variant per learning rate, plus a zero-step baseline.
    pub fn lr_sweep(base: PlanBase, rates: &[f64]) -> Result<Self> {
        let rates = unique_sorted(rates, "learning-rate sweep")?;
        let missing: Vec<String> = REQUIRED_SWEEP_RATES
            .iter()
            .filter(|r| !rates.contains(r))
            .map(|r| format!("{r:e}"))
            .collect();
        if !missing.is_empty() {
            return Err(PeoError::InvalidConfig(format!(
                "learning-rate sweep must include {}",
                missing.join(", ")
            )));
        }
        let mut variants = vec![baseline(&base, base.weights)];
        for lr in rates {
            variants.push(Variant::new(
                rate_label(lr),
                base.weights,
                OptimizerConfig {
                    learning_rate: lr,
                    ..base.optimizer.clone()
                },
            ));
        }
        let reference = base.weights;
        Self::from_base(base, ExperimentKind::LrSweep, variants, reference)
    }

    /// Zero-step baseline and one variant per algorithm, with all weights 1.
    pub fn optimizer_cmp(base: PlanBase, algorithms: &[Algorithm]) -> Result<Self> {
        if algorithms.is_empty() {
            return Err(PeoError::InvalidConfig(
                "optimizer comparison needs at least one algorithm".into(),
            ));
        }
        let mut variants = vec![baseline(&base, OPTIMIZER_CMP_WEIGHTS)];
        for &algorithm in algorithms {
            variants.push(Variant::new(
                algorithm.label(),
                OPTIMIZER_CMP_WEIGHTS,
                OptimizerConfig {
                    algorithm,
                    ..base.optimizer.clone()
                },
            ));
        }
        Self::from_base(
            base,
            ExperimentKind::OptimizerCmp,
            variants,
            OPTIMIZER_CMP_WEIGHTS,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(PeoError::InvalidConfig(
                "experiment plan has no variants".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for v in &self.variants {
            if !seen.insert(v.label.as_str()) {
                return Err(PeoError::InvalidConfig(format!(
                    "duplicate variant label `{}`",
                    v.label
                )));
            }
            v.weights.validate()?;
            v.optimizer.validate()?;
        }
        self.reference_weights.validate()?;
        self.settings.validate()?;
        if self.kind == ExperimentKind::Ablation {
            let w2 = self.reference_weights.w2;
            let w3 = self.reference_weights.w3;
            let expected = [
                (1.0, 0.0, 0.0),
                (1.0, w2, 0.0),
                (1.0, 0.0, w3),
                (1.0, w2, w3),
            ];
            let got: Vec<(f64, f64, f64)> = self
                .variants
                .iter()
                .map(|v| (v.weights.w1, v.weights.w2, v.weights.w3))
                .collect();
            if got != expected {
                return Err(PeoError::InvalidConfig(format!(
                    "ablation variants must be the masks {expected:?}, got {got:?}"
                )));
            }
        }
        Ok(())
    }
}

fn unique_sorted(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(PeoError::InvalidConfig(format!(
            "{what} needs at least one value"
        )));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(PeoError::InvalidConfig(format!(
            "{what} value {v} must be positive and finite"
        )));
    }
    let mut out = values.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}
