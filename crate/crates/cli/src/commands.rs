use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::SystemTime;

use peo_core::harness::bundle::{write_bundle, write_metadata, SCHEMA_VERSION};
use peo_core::harness::plan::{REQUIRED_SWEEP_RATES, WEIGHT_GRID_VALUES};
use peo_core::harness::simplify::simplify_prompt_set;
use peo_core::harness::{
    load_prompt_set, run_experiment, ExperimentPlan, ExperimentReport, PlanBase, PromptOrigin,
};
use peo_core::optimizer::{peo_optimize_observed, TraceDocument, AESTHETIC_CEILING};
use peo_core::{
    capability_check, detect_failure, encode_prompt, generate_image, preservation_term, Algorithm,
    Backbone, BackboneRegistry, FailureKind, GenerationSettings, PeoError,
};
use serde_json::json;

use crate::config::{
    parse_config, ConfigLayer, OptimizerFile, RunConfig, SettingsOverrides, SweepFile, SweepKind,
    WeightsFile,
};
use crate::http::HttpCompletionClient;
use crate::{
    Cli, CliError, Command, RunArgs, SimplifyArgs, SweepArgs, BACKENDS_DIR_ENV, EXIT_DIVERGED,
    EXIT_OK, EXIT_PARTIAL,
};

const DEFAULT_OUT: &str = "peo-output";

/// Run a parsed command line and return the process exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Optimize(args) => cmd_optimize(&args),
        Command::Eval(args) => cmd_experiment(&args, Experiment::Eval),
        Command::Ablate(args) => cmd_experiment(&args, Experiment::Ablate),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Simplify(args) => cmd_simplify(&args),
        Command::Backends => cmd_backends(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn runtime(e: PeoError) -> CliError {
    CliError::runtime(e)
}

/// Built-in backbones plus any descriptors found in `$PEO_BACKENDS_DIR`.
pub fn registry() -> Result<BackboneRegistry, CliError> {
    let mut reg = BackboneRegistry::with_builtins();
    if let Some(dir) = std::env::var_os(BACKENDS_DIR_ENV) {
        reg.discover(Path::new(&dir))
            .map_err(|e| CliError::usage(format!("{BACKENDS_DIR_ENV}: {e}")))?;
    }
    Ok(reg)
}

fn parse_list<T>(
    text: &str,
    what: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(s).ok_or_else(|| CliError::usage(format!("invalid {what} `{s}`"))))
        .collect()
}

fn flags_layer(args: &RunArgs) -> Result<ConfigLayer, CliError> {
    let mut layer = ConfigLayer {
        backbone: args.backbone.clone(),
        preset: args.preset.clone(),
        prompt: args.prompt.clone(),
        prompt_set: args.prompt_set.clone(),
        prompt_origin: args.origin.clone(),
        seed: args.seed,
        output_dir: args.out.clone(),
        ..Default::default()
    };
    if let Some(w) = &args.weights {
        let v = parse_list(w, "weight", |s| s.parse::<f64>().ok())?;
        let [w1, w2, w3] = v[..] else {
            return Err(CliError::usage(format!(
                "--weights expects three values w1,w2,w3, got `{w}`"
            )));
        };
        layer.weights = Some(WeightsFile {
            w1: Some(w1),
            w2: Some(w2),
            w3: Some(w3),
        });
    }
    let algorithm = args
        .optimizer
        .as_deref()
        .map(Algorithm::parse)
        .transpose()
        .map_err(CliError::usage)?;
    let opt = OptimizerFile {
        algorithm,
        learning_rate: args.lr,
        max_steps: args.steps,
        weight_decay: args.weight_decay,
        clip_norm: args.clip_norm,
        ..Default::default()
    };
    if opt != OptimizerFile::default() {
        layer.optimizer = Some(opt);
    }
    let settings = SettingsOverrides {
        guidance_scale: args.guidance,
        sampling_steps: args.sampling_steps,
        ..Default::default()
    };
    if settings != SettingsOverrides::default() {
        layer.settings = Some(settings);
    }
    Ok(layer)
}

/// Defaults ← config file ← flags.
pub fn effective_layer(args: &RunArgs) -> Result<ConfigLayer, CliError> {
    let mut layer = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            parse_config(&text)?
        }
        None => ConfigLayer::default(),
    };
    layer.overlay(&flags_layer(args)?);
    Ok(layer)
}

struct Resolved {
    cfg: RunConfig,
    backbone: Arc<dyn Backbone>,
    settings: GenerationSettings,
    out: PathBuf,
}

fn resolve(layer: &ConfigLayer) -> Result<Resolved, CliError> {
    let cfg = RunConfig::resolve(layer)?;
    let backbone = registry()?
        .resolve(&cfg.backbone)
        .map_err(CliError::usage)?;
    let settings = cfg.generation_settings(backbone.as_ref())?;
    let out = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok(Resolved {
        cfg,
        backbone,
        settings,
        out,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(CliError::runtime)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn cmd_optimize(args: &RunArgs) -> Result<u8, CliError> {
    let started = SystemTime::now();
    let r = resolve(&effective_layer(args)?)?;
    let prompt = r
        .cfg
        .prompt
        .clone()
        .ok_or_else(|| CliError::usage("optimize needs --prompt"))?;
    let backbone = r.backbone.as_ref();
    let theta_init = encode_prompt(&prompt, backbone).map_err(CliError::usage)?;

    create_dir(&r.out)?;
    let steps_dir = r.out.join("steps");
    if steps_dir.exists() {
        fs::remove_dir_all(&steps_dir)
            .map_err(|e| CliError::runtime(format!("{}: {e}", steps_dir.display())))?;
    }
    create_dir(&steps_dir)?;

    let baseline = generate_image(&theta_init, &r.settings, backbone).map_err(runtime)?;
    baseline
        .save_png(&r.out.join("baseline.png"))
        .map_err(runtime)?;

    let mut observer =
        |t: usize, image: &peo_core::GeneratedImage| -> peo_core::Result<Option<String>> {
            let rel = format!("steps/step_{t:03}.png");
            image.save_png(&r.out.join(&rel))?;
            Ok(Some(rel))
        };
    let outcome = peo_optimize_observed(
        &theta_init,
        backbone,
        &r.settings,
        &r.cfg.weights,
        &r.cfg.optimizer,
        &mut observer,
    )
    .map_err(runtime)?;
    outcome
        .best_image
        .save_png(&r.out.join("optimized.png"))
        .map_err(runtime)?;

    let failure = detect_failure(&outcome.trace, AESTHETIC_CEILING);
    let initial = outcome
        .trace
        .initial()
        .expect("trace has the initial record");
    let steps = outcome.trace.records.len() - 1;
    let shift = outcome.theta_star.distance(&theta_init).map_err(runtime)?;
    let preservation = preservation_term(&theta_init, &outcome.theta_star).map_err(runtime)?;
    let echo = r.cfg.echo(&r.settings);

    write_json(
        &r.out.join("trace.json"),
        &TraceDocument {
            backbone: backbone.id().into(),
            prompt: Some(prompt.clone()),
            weights: r.cfg.weights,
            optimizer: r.cfg.optimizer.clone(),
            settings: r.settings.clone(),
            best_total: outcome.best_total,
            failure,
            trace: outcome.trace.clone(),
        },
    )?;
    write_json(&r.out.join("config.json"), &echo)?;
    write_json(
        &r.out.join("summary.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "backbone": backbone.id(),
            "prompt": prompt,
            "initial_total": initial.breakdown.total,
            "best_total": outcome.best_total,
            "initial_breakdown": initial.breakdown,
            "steps": steps,
            "termination": outcome.trace.termination_reason,
            "failure": failure,
            "embedding_shift": shift,
            "preservation": preservation,
            "config": echo,
        }),
    )?;
    write_metadata(&r.out, started, SystemTime::now()).map_err(runtime)?;

    println!(
        "{prompt:?}: total {:.6} -> {:.6} (best), {steps} steps, {}, {}",
        initial.breakdown.total,
        outcome.best_total,
        outcome.trace.termination_reason.label(),
        failure.label()
    );
    Ok(if failure == FailureKind::Diverged {
        EXIT_DIVERGED
    } else {
        EXIT_OK
    })
}

#[derive(Debug, Clone, Copy)]
enum Experiment {
    Eval,
    Ablate,
    Sweep(SweepKind),
}

fn plan_base(r: &Resolved) -> Result<PlanBase, CliError> {
    let path = r
        .cfg
        .prompt_set
        .as_ref()
        .ok_or_else(|| CliError::usage("--prompt-set is required"))?;
    let prompt_set = load_prompt_set(path, r.cfg.prompt_origin).map_err(CliError::usage)?;
    Ok(PlanBase {
        prompt_set,
        backbone_id: r.backbone.id().into(),
        settings: r.settings.clone(),
        weights: r.cfg.weights,
        optimizer: r.cfg.optimizer.clone(),
        global_seed: r.cfg.seed,
    })
}

fn build_plan(r: &Resolved, kind: Experiment) -> Result<ExperimentPlan, CliError> {
    let base = plan_base(r)?;
    let sweep = &r.cfg.sweep;
    let plan = match kind {
        Experiment::Eval => ExperimentPlan::benchmark(base),
        Experiment::Ablate => ExperimentPlan::ablation(base),
        Experiment::Sweep(SweepKind::Lr) => ExperimentPlan::lr_sweep(
            base,
            sweep.values.as_deref().unwrap_or(&REQUIRED_SWEEP_RATES),
        ),
        Experiment::Sweep(SweepKind::Weights) => ExperimentPlan::weight_grid(
            base,
            sweep.values.as_deref().unwrap_or(&WEIGHT_GRID_VALUES),
        ),
        Experiment::Sweep(SweepKind::Optimizer) => {
            let default = [Algorithm::Gd, Algorithm::Adamw, Algorithm::Adam];
            ExperimentPlan::optimizer_cmp(base, sweep.algorithms.as_deref().unwrap_or(&default))
        }
    };
    plan.map_err(CliError::usage)
}

fn finish_experiment(
    r: &Resolved,
    report: &ExperimentReport,
    started: SystemTime,
) -> Result<u8, CliError> {
    let echo = r.cfg.echo(&r.settings);
    create_dir(&r.out)?;
    write_bundle(report, &r.out, &echo).map_err(runtime)?;
    write_json(&r.out.join("config.json"), &echo)?;
    write_metadata(&r.out, started, SystemTime::now()).map_err(runtime)?;
    print!("{}", peo_core::harness::bundle::comparison_markdown(report));
    if report.is_complete() {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "{} row(s) failed; see {}",
            report.failed_rows(),
            r.out.join("rows.csv").display()
        );
        Ok(EXIT_PARTIAL)
    }
}

fn run_plan(r: &Resolved, kind: Experiment) -> Result<u8, CliError> {
    let started = SystemTime::now();
    let plan = build_plan(r, kind)?;
    let report = run_experiment(&plan, r.backbone.as_ref(), None).map_err(runtime)?;
    finish_experiment(r, &report, started)
}

fn cmd_experiment(args: &RunArgs, kind: Experiment) -> Result<u8, CliError> {
    let r = resolve(&effective_layer(args)?)?;
    run_plan(&r, kind)
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8, CliError> {
    let mut layer = effective_layer(&args.run)?;
    let mut flags = SweepFile {
        kind: args.kind.as_deref().map(SweepKind::parse).transpose()?,
        ..Default::default()
    };
    let kind = flags
        .kind
        .or(layer.sweep.as_ref().and_then(|s| s.kind))
        .ok_or_else(|| CliError::usage("sweep needs --kind lr|weights|optimizer"))?;
    if let Some(values) = &args.values {
        match kind {
            SweepKind::Optimizer => {
                flags.algorithms = Some(parse_list(values, "algorithm", |s| {
                    Algorithm::parse(s).ok()
                })?);
            }
            SweepKind::Lr | SweepKind::Weights => {
                flags.values = Some(parse_list(values, "value", |s| s.parse::<f64>().ok())?);
            }
        }
    }
    layer.overlay(&ConfigLayer {
        sweep: Some(flags),
        ..Default::default()
    });
    let mut r = resolve(&layer)?;
    // Echo the values actually used so the config reproduces the run.
    let sweep = &mut r.cfg.sweep;
    sweep.kind = Some(kind);
    match kind {
        SweepKind::Lr => {
            sweep
                .values
                .get_or_insert_with(|| REQUIRED_SWEEP_RATES.to_vec());
        }
        SweepKind::Weights => {
            sweep
                .values
                .get_or_insert_with(|| WEIGHT_GRID_VALUES.to_vec());
        }
        SweepKind::Optimizer => {
            sweep
                .algorithms
                .get_or_insert_with(|| vec![Algorithm::Gd, Algorithm::Adamw, Algorithm::Adam]);
        }
    }
    run_plan(&r, Experiment::Sweep(kind))
}

fn cmd_simplify(args: &SimplifyArgs) -> Result<u8, CliError> {
    let origin = match &args.origin {
        Some(o) => PromptOrigin::parse(o).map_err(CliError::usage)?,
        None => PromptOrigin::Custom,
    };
    let set = load_prompt_set(&args.prompt_set, origin).map_err(CliError::usage)?;
    let client = HttpCompletionClient::new(&args.endpoint, std::env::var(&args.api_key_env).ok());
    let simplified = simplify_prompt_set(&set, &args.model, &client).map_err(runtime)?;
    write_file(&args.out, simplified.to_text().as_bytes())?;
    println!(
        "wrote {} simplified prompts to {}",
        simplified.len(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_backends() -> Result<u8, CliError> {
    let reg = registry()?;
    for name in reg.names() {
        match reg.resolve(name) {
            Ok(b) => {
                let report = capability_check(b.as_ref(), &b.default_settings());
                let checks: Vec<String> = report
                    .checks
                    .iter()
                    .map(|c| format!("{}={}", c.name, if c.passed { "ok" } else { "FAIL" }))
                    .collect();
                println!(
                    "{name}\tencoders={}\t{}",
                    b.encoder_count(),
                    checks.join(" ")
                );
            }
            Err(e) => println!("{name}\tunavailable: {e}"),
        }
    }
    Ok(EXIT_OK)
}
