//! On-disk report bundle.
//!
//! ```text
//! <dir>/rows.csv                     one line per variant × prompt
//! <dir>/summary.json                 aggregates, config echo, decisions
//! <dir>/comparison.md                metrics × variants table
//! <dir>/images/<variant>/NNN.png     image from θ*
//! <dir>/traces/<variant>/NNN.json    optimization trace
//! <dir>/metadata.json                timestamps and paths (not deterministic)
//! ```
//!
//! Everything except `metadata.json` is a pure function of the report and
//! the config echo, so rerunning a plan reproduces it byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::backbone::GenerationSettings;
use crate::error::{PeoError, Result};
use crate::harness::metrics::Aggregate;
use crate::harness::run::{ExperimentReport, PromptSetInfo, RunRow, VariantStatus, VariantSummary};
use crate::objective::ObjectiveWeights;
use crate::optimizer::{FailureKind, OptimizerConfig, TerminationReason};

pub const SCHEMA_VERSION: u32 = 1;

pub const ROWS_FILE: &str = "rows.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARISON_FILE: &str = "comparison.md";
pub const METADATA_FILE: &str = "metadata.json";

const UNAVAILABLE: &str = "unavailable";

pub const ROW_COLUMNS: [&str; 17] = [
    "variant",
    "index",
    "prompt",
    "seed",
    "status",
    "aes_norm",
    "hps",
    "clip_cos",
    "total",
    "variant_total",
    "initial_total",
    "steps",
    "termination",
    "failure",
    "embedding_shift",
    "preservation",
    "error",
];

#[derive(Debug, Clone, Serialize)]
pub struct Decisions {
    pub clip_score: String,
    pub variance: String,
    pub hps: String,
    pub seeds: String,
    pub total: String,
}

impl Decisions {
    fn for_report(report: &ExperimentReport) -> Self {
        Self {
            clip_score: "raw cosine between image features and the original prompt's text embedding, no rescaling".into(),
            variance: "population variance, divisor N".into(),
            hps: match &report.preference_scorer {
                Some(id) => format!("scorer `{id}`"),
                None => "unavailable: no preference scorer configured".into(),
            },
            seeds: "prompt i uses a seed derived from the global seed and i; all variants share it".into(),
            total: "each variant's optimized embedding re-scored under reference_weights".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct VariantEntry<'a> {
    label: &'a str,
    weights: ObjectiveWeights,
    optimizer: &'a OptimizerConfig,
    #[serde(flatten)]
    summary: &'a VariantSummary,
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    schema_version: u32,
    kind: &'static str,
    backbone: &'a str,
    prompt_set: &'a PromptSetInfo,
    global_seed: u64,
    settings: &'a GenerationSettings,
    reference_weights: ObjectiveWeights,
    complete: bool,
    failed_rows: usize,
    decisions: Decisions,
    config: &'a serde_json::Value,
    seeds: &'a [u64],
    variants: Vec<VariantEntry<'a>>,
}

/// Directory-safe form of a variant label.
pub fn variant_dir(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._+=-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn row_record(row: &RunRow) -> Vec<String> {
    let hps = match (row.is_ok(), row.hps) {
        (true, Some(v)) => v.to_string(),
        (true, None) => UNAVAILABLE.into(),
        (false, _) => String::new(),
    };
    vec![
        row.variant.clone(),
        row.index.to_string(),
        row.prompt.clone(),
        row.seed.to_string(),
        if row.is_ok() { "ok" } else { "failed" }.into(),
        opt_num(row.aes_norm),
        hps,
        opt_num(row.clip_cos),
        opt_num(row.total),
        opt_num(row.variant_total),
        opt_num(row.initial_total),
        row.steps.map(|s| s.to_string()).unwrap_or_default(),
        row.termination
            .map(TerminationReason::label)
            .unwrap_or_default()
            .into(),
        row.failure
            .map(FailureKind::label)
            .unwrap_or_default()
            .into(),
        opt_num(row.embedding_shift),
        opt_num(row.preservation),
        row.error.clone().unwrap_or_default(),
    ]
}

/// `rows.csv` contents. Floats use the shortest representation that
/// round-trips, so aggregates recompute exactly from the file.
pub fn rows_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ROW_COLUMNS)?;
    for v in &report.variants {
        for row in &v.rows {
            w.write_record(row_record(row))?;
        }
    }
    w.into_inner().map_err(|e| PeoError::Io {
        path: PathBuf::from(ROWS_FILE),
        source: e.into_error(),
    })
}

pub fn summary_json(report: &ExperimentReport, config: &serde_json::Value) -> Result<Vec<u8>> {
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        kind: report.kind.label(),
        backbone: &report.backbone_id,
        prompt_set: &report.prompt_set,
        global_seed: report.global_seed,
        settings: &report.settings,
        reference_weights: report.reference_weights,
        complete: report.is_complete(),
        failed_rows: report.failed_rows(),
        decisions: Decisions::for_report(report),
        config,
        seeds: &report.seeds,
        variants: report
            .variants
            .iter()
            .map(|v| VariantEntry {
                label: &v.variant.label,
                weights: v.variant.weights,
                optimizer: &v.variant.optimizer,
                summary: &v.summary,
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&summary)?;
    out.push(b'\n');
    Ok(out)
}

fn cell(a: Option<&Aggregate>) -> String {
    match a {
        Some(a) => format!("{:.4} ± {:.6}", a.mean, a.variance),
        None => "n/a".into(),
    }
}

/// Human-readable table: metrics as rows, variants as columns.
pub fn comparison_markdown(report: &ExperimentReport) -> String {
    let mut md = String::new();
    let _ = writeln!(
        md,
        "# {} on `{}`: {} ({}, {} prompts)\n",
        report.kind.label(),
        report.backbone_id,
        report.prompt_set.name,
        report.prompt_set.origin,
        report.prompt_set.count
    );
    let w = report.reference_weights;
    let _ = writeln!(
        md,
        "Mean ± population variance over successful rows. CLIP cosine is the raw cosine against the \
         original prompt. Totals are re-scored with weights ({}, {}, {}).\n",
        w.w1, w.w2, w.w3
    );

    md.push_str("| metric |");
    for v in &report.variants {
        let _ = write!(md, " {} |", v.variant.label);
    }
    md.push_str("\n|---|");
    for _ in &report.variants {
        md.push_str("---|");
    }
    md.push('\n');

    let metric_rows = [
        ("aesthetic (normalized) ↑", "aes_norm"),
        ("HPS ↑", "hps"),
        ("CLIP cosine ↑", "clip_cos"),
        ("total (reference weights) ↑", "total"),
        ("‖θ* − θ_init‖", "embedding_shift"),
        ("cos(θ*, θ_init)", "preservation"),
    ];
    for (title, key) in metric_rows {
        let _ = write!(md, "| {title} |");
        for v in &report.variants {
            let text = if key == "hps" && report.preference_scorer.is_none() {
                UNAVAILABLE.to_string()
            } else {
                cell(v.summary.aggregates.get(key))
            };
            let _ = write!(md, " {text} |");
        }
        md.push('\n');
    }
    type Count = fn(&VariantSummary) -> usize;
    let count_rows: [(&str, Count); 3] = [
        ("diverged runs", |s| s.failure_counts.diverged),
        ("ceiling runs", |s| s.failure_counts.ceiling),
        ("failed rows", |s| s.failed),
    ];
    for (title, count) in count_rows {
        let _ = write!(md, "| {title} |");
        for v in &report.variants {
            let total = v.summary.completed + v.summary.failed;
            let _ = write!(md, " {}/{} |", count(&v.summary), total);
        }
        md.push('\n');
    }
    let partial: Vec<&str> = report
        .variants
        .iter()
        .filter(|v| v.summary.status != VariantStatus::Complete)
        .map(|v| v.variant.label.as_str())
        .collect();
    if !partial.is_empty() {
        let _ = writeln!(md, "\nIncomplete variants: {}.", partial.join(", "));
    }
    md
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| PeoError::io(path, e))
}

fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| PeoError::io(path, e))?;
    }
    fs::create_dir_all(path).map_err(|e| PeoError::io(path, e))
}

/// Write every deterministic bundle file. `images/` and `traces/` are
/// recreated so files from an earlier, larger run cannot linger.
pub fn write_bundle(
    report: &ExperimentReport,
    dir: &Path,
    config: &serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PeoError::io(dir, e))?;
    let images = dir.join("images");
    let traces = dir.join("traces");
    fresh_dir(&images)?;
    fresh_dir(&traces)?;
    for v in &report.variants {
        let sub = variant_dir(&v.variant.label);
        let (img_dir, trace_dir) = (images.join(&sub), traces.join(&sub));
        fs::create_dir_all(&img_dir).map_err(|e| PeoError::io(&img_dir, e))?;
        fs::create_dir_all(&trace_dir).map_err(|e| PeoError::io(&trace_dir, e))?;
        for (row, artifacts) in v.rows.iter().zip(&v.artifacts) {
            let Some(a) = artifacts else { continue };
            write(&img_dir.join(format!("{:03}.png", row.index)), &a.png)?;
            let mut json = serde_json::to_vec_pretty(&a.trace)?;
            json.push(b'\n');
            write(&trace_dir.join(format!("{:03}.json", row.index)), &json)?;
        }
    }
    write(&dir.join(ROWS_FILE), &rows_csv(report)?)?;
    write(&dir.join(SUMMARY_FILE), &summary_json(report, config)?)?;
    write(
        &dir.join(COMPARISON_FILE),
        comparison_markdown(report).as_bytes(),
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool_version: &'static str,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub output_dir: String,
}

fn unix_ms(t: SystemTime) -> u128 {
    t.duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// The one non-deterministic file of a bundle.
pub fn write_metadata(dir: &Path, started: SystemTime, finished: SystemTime) -> Result<()> {
    let meta = Metadata {
        tool_version: env!("CARGO_PKG_VERSION"),
        started_unix_ms: unix_ms(started),
        finished_unix_ms: unix_ms(finished),
        output_dir: dir.display().to_string(),
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    write(&dir.join(METADATA_FILE), &json)
}
