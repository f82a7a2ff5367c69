use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use biasprop::corpus::{load_named, Group};
use biasprop::experiments::{
    preset_group, run_experiment, run_intrinsic, run_suite, ExperimentReport, ExperimentSpec,
    ModelCorpora, SuiteReport,
};
use biasprop::synth::{compare_reports, generate_world, oracle_run, PlantedParams};
use serde::Serialize;

use crate::config::{
    default_world_model, ExperimentRef, ReportFormat, RunConfig, ALL_FORMATS, SYNTH_MODEL_TAG,
};
use crate::{Command, RunArgs};

/// Largest engine-versus-oracle rho difference accepted by `oracle-check`.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

/// Maps to exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn dispatch(command: Command, jobs: Option<usize>) -> Result<ExitCode> {
    match command {
        Command::Validate { corpora } => Ok(validate(&corpora)),
        Command::Synth {
            params,
            output,
            seed,
        } => synth(params.as_deref(), &output, seed).map(|()| ExitCode::SUCCESS),
        Command::Sceat(args) => with_pool(args, jobs, |ctx| sceat(ctx).map(|()| ExitCode::SUCCESS)),
        Command::Run(args) => with_pool(args, jobs, |ctx| run(ctx).map(|()| ExitCode::SUCCESS)),
        Command::Suite(args) => with_pool(args, jobs, |ctx| suite(ctx).map(|()| ExitCode::SUCCESS)),
        Command::OracleCheck(args) => with_pool(args, jobs, oracle_check),
    }
}

fn validate(paths: &[PathBuf]) -> ExitCode {
    let mut failed = false;
    for path in paths {
        match load_named(path) {
            Ok(c) => println!(
                "ok {}: {} items, dim {}, sha256 {}",
                path.display(),
                c.count(),
                c.dim(),
                c.fingerprint()
            ),
            Err(e) => {
                failed = true;
                eprintln!("invalid {}: {e}", path.display());
            }
        }
    }
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn synth(params_path: Option<&Path>, output: &Path, seed: Option<u64>) -> Result<()> {
    let mut params = match params_path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<PlantedParams>(&text)
                .with_context(|| format!("parsing {}", p.display()))?
        }
        None => PlantedParams::default(),
    };
    if let Some(seed) = seed {
        params.seed = seed;
    }
    let world = generate_world(&params)?;
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let mut corpora = std::collections::BTreeMap::new();
    for (name, corpus) in &world.parts {
        corpus.write_named(output, name)?;
        corpora.insert(name.clone(), PathBuf::from(name));
        println!(
            "wrote {name}: {} items, sha256 {}",
            corpus.count(),
            corpus.fingerprint()
        );
    }
    write(&output.join("params.json"), &to_json(&params))?;
    let config = RunConfig {
        models: [(SYNTH_MODEL_TAG.to_string(), corpora)].into(),
        experiments: vec![ExperimentRef::Preset("all-small".into())],
        output_dir: Some(PathBuf::from("report")),
        seed: Some(params.seed),
        ..Default::default()
    };
    write(&output.join("config.json"), &to_json(&config))?;
    Ok(())
}

/// Everything a run-style subcommand needs, resolved from flags and config.
struct RunContext {
    models: Vec<ModelCorpora>,
    specs: Vec<ExperimentSpec>,
    output: Option<PathBuf>,
    formats: Vec<ReportFormat>,
}

fn with_pool(
    args: RunArgs,
    jobs: Option<usize>,
    f: impl FnOnce(RunContext) -> Result<ExitCode> + Send,
) -> Result<ExitCode> {
    let config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let jobs = jobs.or(config.jobs);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(usage("--jobs must be positive"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("starting worker pool")?;
    pool.install(|| {
        let ctx = resolve(&args, &config)?;
        f(ctx)
    })
}

fn resolve(args: &RunArgs, config: &RunConfig) -> Result<RunContext> {
    let seed = args.seed.or(config.seed);
    let models = if args.synth_default {
        vec![default_world_model(seed.unwrap_or(0))?]
    } else {
        config.load_models()?
    };
    let mut specs = if let Some(name) = &args.preset {
        preset_group(name)?
    } else if let Some(path) = &args.spec {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        vec![ExperimentSpec::from_json(&text).with_context(|| format!("spec {}", path.display()))?]
    } else {
        config.specs()?
    };
    if specs.is_empty() {
        if args.synth_default {
            specs = preset_group("all-small")?;
        } else {
            return Err(usage(
                "no experiments: pass --preset, --spec, or list them in the config",
            ));
        }
    }
    if let Some(seed) = seed {
        for spec in &mut specs {
            spec.seed = seed;
        }
    }
    let output = args
        .output
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|p| config.resolve(p)));
    Ok(RunContext {
        models,
        specs,
        output,
        formats: if args.config.is_some() {
            config.formats()
        } else {
            ALL_FORMATS.to_vec()
        },
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit(ctx: &RunContext, json: &str, csv: &str, summary: &str) -> Result<()> {
    print!("{summary}");
    let Some(dir) = &ctx.output else {
        return Ok(());
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for format in &ctx.formats {
        match format {
            ReportFormat::Json => write(&dir.join("report.json"), json)?,
            ReportFormat::Csv => write(&dir.join("report.csv"), csv)?,
            ReportFormat::Summary => write(&dir.join("summary.txt"), summary)?,
        }
    }
    Ok(())
}

fn group_label(g: Option<Group>) -> String {
    g.map_or_else(|| "all".to_string(), |g| g.to_string())
}

pub fn experiment_summary(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} on {}: {} targets, seed {}",
        report.spec.name,
        report.model,
        report.targets.len(),
        report.seed
    );
    for stratum in &report.strata {
        let _ = match (&stratum.correlation, &stratum.note) {
            (Some(c), _) => writeln!(
                s,
                "  {:<10} n = {:>4}  rho = {:+.4}  p = {:.3e}",
                group_label(stratum.group),
                stratum.n,
                c.rho,
                c.p_value
            ),
            (None, note) => writeln!(
                s,
                "  {:<10} n = {:>4}  rho undefined ({})",
                group_label(stratum.group),
                stratum.n,
                note.as_deref().unwrap_or("unknown")
            ),
        };
    }
    s
}

pub fn suite_summary(report: &SuiteReport) -> String {
    let mut s = String::new();
    for r in &report.experiments {
        s.push_str(&experiment_summary(r));
    }
    for f in &report.failures {
        let _ = writeln!(s, "failed {} on {}: {}", f.experiment, f.model, f.error);
    }
    let _ = writeln!(s, "{}", report.summary_line());
    s
}

fn single<'a, T>(items: &'a [T], what: &str) -> Result<&'a T> {
    match items {
        [one] => Ok(one),
        _ => Err(usage(format!(
            "run takes exactly one {what}, got {}; use suite",
            items.len()
        ))),
    }
}

fn run(ctx: RunContext) -> Result<()> {
    let spec = single(&ctx.specs, "experiment")?;
    let model = single(&ctx.models, "model")?;
    let report =
        run_experiment(spec, model).with_context(|| format!("experiment {}", spec.name))?;
    emit(
        &ctx,
        &report.to_json(),
        &report.to_csv(),
        &experiment_summary(&report),
    )
}

fn suite(ctx: RunContext) -> Result<()> {
    let report = run_suite(&ctx.specs, &ctx.models)?;
    emit(
        &ctx,
        &report.to_json(),
        &report.to_csv(),
        &suite_summary(&report),
    )
}

#[derive(Serialize)]
struct IntrinsicValue {
    #[serde(skip_serializing_if = "Option::is_none")]
    attribute_group: Option<Group>,
    intrinsic: f64,
}

#[derive(Serialize)]
struct IntrinsicRecord {
    experiment: String,
    model: String,
    row: usize,
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    group: Option<Group>,
    values: Vec<IntrinsicValue>,
}

fn sceat(ctx: RunContext) -> Result<()> {
    let mut records = Vec::new();
    let mut summary = String::new();
    let mut csv = String::from("experiment,model,target_id,group,attribute_group,intrinsic\n");
    for model in &ctx.models {
        for spec in &ctx.specs {
            let targets =
                run_intrinsic(spec, model).with_context(|| format!("experiment {}", spec.name))?;
            let values: Vec<f64> = targets
                .iter()
                .flat_map(|t| t.values.iter().map(|v| v.intrinsic))
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let _ = writeln!(
                summary,
                "{} on {}: {} targets, mean effect size {:+.4}",
                spec.name,
                model.tag,
                targets.len(),
                mean
            );
            for t in targets {
                for v in &t.values {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{}",
                        spec.name,
                        model.tag,
                        t.id,
                        t.group.map(|g| g.to_string()).unwrap_or_default(),
                        v.group.map(|g| g.to_string()).unwrap_or_default(),
                        v.intrinsic
                    );
                }
                records.push(IntrinsicRecord {
                    experiment: spec.name.clone(),
                    model: model.tag.clone(),
                    row: t.row,
                    id: t.id,
                    group: t.group,
                    values: t
                        .values
                        .into_iter()
                        .map(|v| IntrinsicValue {
                            attribute_group: v.group,
                            intrinsic: v.intrinsic,
                        })
                        .collect(),
                });
            }
        }
    }
    emit(&ctx, &to_json(&records), &csv, &summary)
}

fn oracle_check(ctx: RunContext) -> Result<ExitCode> {
    let mut diffs = Vec::new();
    let mut summary = String::new();
    let mut worst = Some(0.0f64);
    for model in &ctx.models {
        for spec in &ctx.specs {
            let engine =
                run_experiment(spec, model).with_context(|| format!("engine on {}", spec.name))?;
            let oracle =
                oracle_run(spec, model).with_context(|| format!("oracle on {}", spec.name))?;
            let diff = compare_reports(&engine, &oracle);
            let _ = match diff.max_rho {
                Some(d) => writeln!(
                    summary,
                    "{} on {}: max |Δrho| = {:.3e} (intrinsic {:.3e}, extrinsic {:.3e})",
                    spec.name, model.tag, d, diff.max_intrinsic, diff.max_extrinsic
                ),
                None => writeln!(
                    summary,
                    "{} on {}: strata disagree on which correlations are defined",
                    spec.name, model.tag
                ),
            };
            worst = match (worst, diff.max_rho) {
                (Some(w), Some(d)) => Some(w.max(d)),
                _ => None,
            };
            diffs.push(diff);
        }
    }
    let pass = worst.is_some_and(|w| w <= ORACLE_TOLERANCE);
    let _ = match worst {
        Some(w) => writeln!(
            summary,
            "max |Δrho| = {w:.3e} over {} experiments: {}",
            diffs.len(),
            if pass { "ok" } else { "MISMATCH" }
        ),
        None => writeln!(summary, "MISMATCH: undefined-correlation pattern differs"),
    };
    let mut csv =
        String::from("experiment,max_abs_rho_diff,max_abs_intrinsic_diff,max_abs_extrinsic_diff\n");
    for d in &diffs {
        let rho = d.max_rho.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{rho},{},{}",
            d.experiment, d.max_intrinsic, d.max_extrinsic
        );
    }
    emit(&ctx, &to_json(&diffs), &csv, &summary)?;
    if pass {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: engine and oracle disagree beyond {ORACLE_TOLERANCE:e}");
        Ok(ExitCode::from(1))
    }
}
