use std::collections::BTreeMap;
use std::path::Path;

use peo_core::harness::bundle::{rows_csv, summary_json, ROW_COLUMNS};
use peo_core::harness::plan::BASELINE_LABEL;
use peo_core::harness::{
    aggregate, compute_metrics, load_prompt_set, run_experiment, write_bundle, ExperimentPlan,
    PlanBase, PromptOrigin, Scorers, VariantStatus,
};
use peo_core::objective::Gradient;
use peo_core::{
    Backbone, GeneratedImage, GenerationSettings, ImageFeatures, ObjectiveWeights, OptimizerConfig,
    PeoError, PromptEmbedding, Result, ToyBackbone,
};

fn prompts20() -> peo_core::harness::PromptSet {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/prompts20.txt");
    load_prompt_set(&path, PromptOrigin::Custom).unwrap()
}

fn base(backbone: &dyn Backbone) -> PlanBase {
    PlanBase {
        prompt_set: prompts20(),
        backbone_id: backbone.id().into(),
        settings: backbone.default_settings(),
        weights: ObjectiveWeights::default(),
        optimizer: OptimizerConfig::default(),
        global_seed: 0,
    }
}

/// Delegates to the toy, optionally overriding behaviour.
struct Wrapped {
    inner: ToyBackbone,
    fail_on: Option<&'static str>,
    echo_text_features: bool,
    concurrent: bool,
}

impl Wrapped {
    fn new() -> Self {
        Self {
            inner: ToyBackbone::builtin().unwrap(),
            fail_on: None,
            echo_text_features: false,
            concurrent: true,
        }
    }
}

impl Backbone for Wrapped {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn encoder_count(&self) -> usize {
        self.inner.encoder_count()
    }
    fn concurrent_safe(&self) -> bool {
        self.concurrent
    }
    fn default_settings(&self) -> GenerationSettings {
        self.inner.default_settings()
    }
    fn text_encode(&self, prompt: &str) -> Result<PromptEmbedding> {
        if Some(prompt) == self.fail_on {
            return Err(PeoError::Backbone("encoder offline".into()));
        }
        self.inner.text_encode(prompt)
    }
    fn unconditional_embedding(&self) -> &PromptEmbedding {
        self.inner.unconditional_embedding()
    }
    fn generate(
        &self,
        theta: &PromptEmbedding,
        settings: &GenerationSettings,
    ) -> Result<GeneratedImage> {
        self.inner.generate(theta, settings)
    }
    fn image_encode(&self, image: &GeneratedImage) -> Result<Vec<ImageFeatures>> {
        if self.echo_text_features {
            let t = self.inner.text_encode("a cat")?;
            return t
                .vectors()
                .iter()
                .map(|v| ImageFeatures::new(v.clone()))
                .collect();
        }
        self.inner.image_encode(image)
    }
    fn aesthetic_score(&self, image: &GeneratedImage) -> Result<f64> {
        self.inner.aesthetic_score(image)
    }
    fn aesthetic_score_vjp(&self, image: &GeneratedImage, cotangent: f64) -> Result<Vec<f64>> {
        self.inner.aesthetic_score_vjp(image, cotangent)
    }
    fn image_encode_vjp(
        &self,
        image: &GeneratedImage,
        cotangents: &[Vec<f64>],
    ) -> Result<Vec<f64>> {
        self.inner.image_encode_vjp(image, cotangents)
    }
    fn generate_vjp(
        &self,
        theta: &PromptEmbedding,
        settings: &GenerationSettings,
        pixel_cotangent: &[f64],
    ) -> Result<Gradient> {
        self.inner.generate_vjp(theta, settings, pixel_cotangent)
    }
}

#[test]
fn metric_row_matches_golden_oracle() {
    let golden: serde_json::Value =
        serde_json::from_str(include_str!("../fixtures/toy/v1/golden/toy_golden.json")).unwrap();
    let want = &golden["metric_row_a_cat"];
    let toy = ToyBackbone::builtin().unwrap();
    let theta = toy.text_encode("a cat").unwrap();
    let image = toy.generate(&theta, &toy.default_settings()).unwrap();
    let row = compute_metrics(&image, "a cat", Scorers::new(&toy)).unwrap();
    let close = |a: f64, b: &serde_json::Value| (a - b.as_f64().unwrap()).abs() <= 1e-13;
    assert!(close(row.aes_norm, &want["aes_norm"]), "{row:?}");
    assert!(close(row.clip_cos, &want["clip_cos"]), "{row:?}");
    assert_eq!(row.hps, None);
}

#[test]
fn identical_features_give_unit_clip_cosine() {
    let b = Wrapped {
        echo_text_features: true,
        ..Wrapped::new()
    };
    let theta = b.text_encode("a cat").unwrap();
    let image = b.generate(&theta, &b.default_settings()).unwrap();
    let row = compute_metrics(&image, "a cat", Scorers::new(&b)).unwrap();
    assert!((row.clip_cos - 1.0).abs() < 1e-12);
}

#[test]
fn benchmark_improves_mean_aesthetic_over_zero_steps() {
    let toy = ToyBackbone::builtin().unwrap();
    let report =
        run_experiment(&ExperimentPlan::benchmark(base(&toy)).unwrap(), &toy, None).unwrap();
    let aes = |label: &str| report.variant(label).unwrap().summary.aggregates["aes_norm"].mean;
    assert!(
        aes("peo") >= aes(BASELINE_LABEL),
        "{} vs {}",
        aes("peo"),
        aes(BASELINE_LABEL)
    );
    assert!(report.is_complete());
}

#[test]
fn ablation_all_terms_has_highest_mean_total() {
    let toy = ToyBackbone::builtin().unwrap();
    let report =
        run_experiment(&ExperimentPlan::ablation(base(&toy)).unwrap(), &toy, None).unwrap();
    let totals: BTreeMap<&str, f64> = report
        .variants
        .iter()
        .map(|v| (v.variant.label.as_str(), v.summary.aggregates["total"].mean))
        .collect();
    let all = totals["L1+L2+PPT"];
    for (label, t) in &totals {
        assert!(all >= *t, "all-terms {all} < {label} {t}");
    }
}

#[test]
fn lr_sweep_orders_shift_and_divergence() {
    let toy = ToyBackbone::builtin().unwrap();
    let plan = ExperimentPlan::lr_sweep(base(&toy), &[1e-5, 1e-2, 2e-1]).unwrap();
    let report = run_experiment(&plan, &toy, None).unwrap();
    let shift = |l: &str| report.variant(l).unwrap().summary.aggregates["embedding_shift"].mean;
    assert!(shift("lr=1e-5") < shift("lr=1e-2"));
    let diverged = |l: &str| report.variant(l).unwrap().summary.failure_counts.diverged;
    assert!(diverged("lr=2e-1") > diverged("lr=1e-2"));
    assert!(diverged("lr=2e-1") > diverged("lr=1e-5"));
}

#[test]
fn failing_prompt_isolated_to_its_row() {
    let b = Wrapped {
        fail_on: Some("a red bicycle"),
        ..Wrapped::new()
    };
    let report = run_experiment(&ExperimentPlan::benchmark(base(&b)).unwrap(), &b, None).unwrap();
    assert!(!report.is_complete());
    for v in &report.variants {
        assert_eq!(v.summary.status, VariantStatus::Partial);
        assert_eq!(v.summary.failed, 1);
        assert_eq!(v.summary.aggregates["aes_norm"].n, 19);
        let bad = v.rows.iter().find(|r| !r.is_ok()).unwrap();
        assert_eq!(bad.prompt, "a red bicycle");
        assert!(bad.error.as_deref().unwrap().contains("encoder offline"));
    }
}

#[test]
fn serial_and_parallel_runs_agree() {
    let parallel = Wrapped::new();
    let serial = Wrapped {
        concurrent: false,
        ..Wrapped::new()
    };
    let a = run_experiment(
        &ExperimentPlan::ablation(base(&parallel)).unwrap(),
        &parallel,
        None,
    )
    .unwrap();
    let b = run_experiment(
        &ExperimentPlan::ablation(base(&serial)).unwrap(),
        &serial,
        None,
    )
    .unwrap();
    assert_eq!(rows_csv(&a).unwrap(), rows_csv(&b).unwrap());
    let indices: Vec<usize> = a.variants[0].rows.iter().map(|r| r.index).collect();
    assert_eq!(indices, (0..20).collect::<Vec<_>>());
}

#[test]
fn seeds_are_paired_across_variants() {
    let toy = ToyBackbone::builtin().unwrap();
    let report =
        run_experiment(&ExperimentPlan::ablation(base(&toy)).unwrap(), &toy, None).unwrap();
    let seeds = |i: usize| -> Vec<u64> { report.variants.iter().map(|v| v.rows[i].seed).collect() };
    for i in 0..20 {
        let s = seeds(i);
        assert!(s.iter().all(|x| *x == s[0]));
        assert_eq!(s[0], report.seeds[i]);
    }
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn bundle_is_byte_identical_and_aggregates_recompute_from_rows() {
    let toy = ToyBackbone::builtin().unwrap();
    let plan = ExperimentPlan::ablation(base(&toy)).unwrap();
    let config = serde_json::json!({"note": "test"});
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let report = run_experiment(&plan, &toy, None).unwrap();
        write_bundle(&report, d.path(), &config).unwrap();
    }
    let (a, b) = (read_tree(dirs[0].path()), read_tree(dirs[1].path()));
    assert_eq!(a, b);
    assert!(a.contains_key("images/L1+PPT/019.png"));
    assert!(a.contains_key("traces/L1+L2+PPT/000.json"));

    let mut reader = csv::Reader::from_reader(&a["rows.csv"][..]);
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ROW_COLUMNS
    );
    let mut by_variant: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[6], "unavailable");
        by_variant
            .entry(rec[0].to_string())
            .or_default()
            .push(rec[5].parse().unwrap());
    }
    let summary: serde_json::Value = serde_json::from_slice(&a["summary.json"]).unwrap();
    assert_eq!(summary["schema_version"], 1);
    for v in summary["variants"].as_array().unwrap() {
        let label = v["label"].as_str().unwrap();
        let recomputed = aggregate(&by_variant[label]).unwrap();
        assert_eq!(
            v["aggregates"]["aes_norm"]["mean"].as_f64().unwrap(),
            recomputed.mean
        );
        assert_eq!(
            v["aggregates"]["aes_norm"]["variance"].as_f64().unwrap(),
            recomputed.variance
        );
    }
    let report = run_experiment(&plan, &toy, None).unwrap();
    assert_eq!(summary_json(&report, &config).unwrap(), a["summary.json"]);
}
