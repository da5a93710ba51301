//! Command-line interface.

use std::collections::BTreeMap;
use std::error::Error;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use trival_core::backend::LiveBackend;
use trival_core::executor::ExecutorConfig;
use trival_core::{
    is_correct, ChatBackend, ExecutionStatus, Executor, GeneratedProgram, PipelineSettings,
    PromptPack, ScriptMode, ScriptedBackend, StageContext, SubprocessExecutor,
};

use crate::classify::classify_failure;
use crate::config::{AblationSpec, BackendSpec, RunConfig};
use crate::evaluate::{evaluate_all, BackendSource, InstanceRunner, PipelineRunner, TypeDirective};
use crate::report::{render_comparison, render_markdown};
use crate::results::{load_results, write_results, RecordsFile};
use crate::suite::{load_suite, Suite};

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Debug, Parser)]
#[command(
    name = "trival",
    version,
    about = "Run and score the optimization modeling pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline over a suite and write a results directory.
    Run(RunArgs),
    /// Score a predictions file against a suite.
    Score {
        #[arg(long)]
        suite: PathBuf,
        /// JSON object mapping instance id to an objective or a list of them.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Print the tables for a results directory.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Second results directory to compare against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Run one instance against a scripted reply queue and print its transcript.
    Replay {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        instance: String,
        #[arg(long)]
        script: PathBuf,
        #[arg(long, value_enum)]
        branch: Option<BranchArg>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Accept replies out of order (matched by purpose).
        #[arg(long)]
        lenient: bool,
        /// Write the transcript here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a suite file; optionally run each instance's reference code.
    ValidateSuite {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        run_reference: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BranchArg {
    Integral,
    Continuous,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub repeats: Option<u32>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// `live`, `scripted:<file-or-dir>` or `scripted-lenient:<file-or-dir>`.
    #[arg(long, value_parser = BackendSpec::parse_cli)]
    pub backend: Option<BackendSpec>,
    /// Comma-separated ablation presets, e.g. `no-validation`.
    #[arg(long)]
    pub ablate: Option<String>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Skip error classification of failed instances.
    #[arg(long)]
    pub no_classify: bool,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Run(args) => run_suite(args, out),
        Command::Score { suite, predictions } => score(&suite, &predictions, out),
        Command::Report { results, baseline } => report(&results, baseline.as_deref(), out),
        Command::Replay {
            suite,
            instance,
            script,
            branch,
            config,
            lenient,
            out: dest,
        } => replay(
            &suite,
            &instance,
            &script,
            branch,
            config.as_deref(),
            lenient,
            dest.as_deref(),
            out,
        ),
        Command::ValidateSuite {
            suite,
            run_reference,
            config,
        } => validate_suite(&suite, run_reference, config.as_deref(), out),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Box<dyn Error>> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn load_prompts(config: &RunConfig) -> Result<PromptPack, Box<dyn Error>> {
    Ok(match &config.pipeline.prompt_pack {
        Some(dir) => PromptPack::load(dir)?,
        None => PromptPack::builtin(),
    })
}

fn executor(config: &ExecutorConfig) -> Result<SubprocessExecutor, Box<dyn Error>> {
    Ok(SubprocessExecutor::new(config.clone())?)
}

fn backend_source(spec: &BackendSpec) -> Result<BackendSource, Box<dyn Error>> {
    Ok(match spec {
        BackendSpec::Scripted { path, mode } if path.is_dir() => BackendSource::ScriptDir {
            dir: path.clone(),
            mode: *mode,
        },
        BackendSpec::Scripted { path, mode } => {
            BackendSource::Shared(Arc::new(ScriptedBackend::load(path, *mode)?))
        }
        BackendSpec::Live(live) => {
            BackendSource::Shared(Arc::new(LiveBackend::new(live.clone().from_env())?))
        }
    })
}

fn run_suite(args: RunArgs, out: &mut dyn Write) -> CliResult {
    let suite = load_suite(&args.suite)?;
    let mut config = load_config(args.config.as_deref())?;
    if let Some(r) = args.repeats {
        config.bench.repeats = r;
    }
    if let Some(p) = args.parallelism {
        config.bench.parallelism = p;
    }
    if let Some(a) = args.ablate {
        config.pipeline.ablation = AblationSpec::Preset(a);
    }
    if let Some(b) = args.backend {
        config.backend = Some(b);
    }
    if args.no_classify {
        config.bench.classify_errors = false;
    }
    config.validate()?;
    let spec = config
        .backend
        .clone()
        .ok_or("no backend configured (use --backend or a [backend] section)")?;
    let source = backend_source(&spec)?;
    let mut parallelism = config.bench.parallelism;
    if matches!(
        (&spec, &source),
        (BackendSpec::Scripted { .. }, BackendSource::Shared(_))
    ) && parallelism > 1
    {
        tracing::warn!("a single scripted queue is consumed in order; running sequentially");
        parallelism = 1;
    }

    let settings = config.settings()?;
    let prompts = load_prompts(&config)?;
    let exec = executor(&config.executor)?;
    let runner = PipelineRunner {
        backends: source.clone(),
        executor: &exec,
        prompts: &prompts,
        settings: &settings,
        run_id: suite.name.clone(),
    };
    tracing::info!(
        instances = suite.instances.len(),
        repeats = config.bench.repeats,
        variant = %settings.ablation.name(),
        "starting run"
    );
    let evaluations = evaluate_all(&suite.instances, &runner, config.bench.repeats, parallelism);

    let mut records = Vec::with_capacity(evaluations.len());
    let mut transcripts = Vec::new();
    for (inst, mut e) in suite.instances.iter().zip(evaluations) {
        if config.bench.classify_errors && !e.record.correct {
            if let Some(backend) = classifier_backend(&source, &inst.id)? {
                let ctx = StageContext {
                    backend: &*backend,
                    prompts: &prompts,
                    budgets: &settings.budgets,
                    generation: &settings.generation,
                };
                let artifacts = e.last_failure.clone().unwrap_or_default().render();
                e.record.error = Some(classify_failure(&ctx, inst, &artifacts));
            }
        }
        transcripts.extend(e.transcripts);
        records.push(e.record);
    }
    let file = RecordsFile {
        suite: suite.name.clone(),
        variant: settings.ablation.name(),
        repeats: config.bench.repeats,
        records,
    };
    let summary = write_results(&args.out, &file, &transcripts)?;
    writeln!(
        out,
        "accuracy: {:.1}% ({}/{})  results: {}",
        summary.accuracy,
        summary.correct,
        summary.instances,
        args.out.display()
    )?;
    Ok(())
}

/// The classifier shares the run's backend; with a script directory it reads
/// `<id>.classify.jsonl` and is skipped when that file is absent.
fn classifier_backend(
    source: &BackendSource,
    id: &str,
) -> Result<Option<Arc<dyn ChatBackend>>, Box<dyn Error>> {
    match source {
        BackendSource::Shared(b) => Ok(Some(b.clone())),
        BackendSource::ScriptDir { dir, mode } => {
            let path = dir.join(format!("{id}.classify.jsonl"));
            if path.is_file() {
                Ok(Some(Arc::new(ScriptedBackend::load(&path, *mode)?)))
            } else {
                Ok(None)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Prediction {
    One(Option<f64>),
    Many(Vec<Option<f64>>),
}

impl Prediction {
    fn values(&self) -> Vec<f64> {
        match self {
            Prediction::One(v) => v.iter().copied().collect(),
            Prediction::Many(v) => v.iter().flatten().copied().collect(),
        }
    }
}

fn score(suite_path: &Path, predictions: &Path, out: &mut dyn Write) -> CliResult {
    let suite = load_suite(suite_path)?;
    let text = std::fs::read_to_string(predictions)
        .map_err(|e| format!("cannot read {}: {e}", predictions.display()))?;
    let preds: BTreeMap<String, Prediction> =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", predictions.display()))?;
    if let Some(unknown) = preds.keys().find(|k| suite.get(k).is_none()) {
        return Err(format!(
            "{}: prediction for unknown instance `{unknown}`",
            predictions.display()
        )
        .into());
    }
    let mut correct = 0;
    for inst in &suite.instances {
        let values = preds
            .get(&inst.id)
            .map(Prediction::values)
            .unwrap_or_default();
        let mut ok = false;
        for y in &values {
            ok |= is_correct(*y, inst.reference_objective)
                .map_err(|e| format!("instance `{}`: {e}", inst.id))?;
        }
        correct += usize::from(ok);
        let shown = match values.as_slice() {
            [] => "-".to_string(),
            v => v
                .iter()
                .map(|y| y.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        };
        writeln!(
            out,
            "{}\t{}\treference {}\tpredicted {}",
            if ok { "ok" } else { "wrong" },
            inst.id,
            inst.reference_objective,
            shown
        )?;
    }
    let n = suite.instances.len();
    let acc = if n == 0 {
        0.0
    } else {
        100.0 * correct as f64 / n as f64
    };
    writeln!(out, "accuracy: {acc:.1}% ({correct}/{n})")?;
    Ok(())
}

fn report(results: &Path, baseline: Option<&Path>, out: &mut dyn Write) -> CliResult {
    let r = load_results(results)?;
    write!(out, "{}", render_markdown(&r.summary))?;
    if let Some(b) = baseline {
        let b = load_results(b)?;
        write!(out, "\n{}", render_comparison(&r.summary, &b.summary))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn replay(
    suite_path: &Path,
    instance: &str,
    script: &Path,
    branch: Option<BranchArg>,
    config: Option<&Path>,
    lenient: bool,
    dest: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult {
    let suite = load_suite(suite_path)?;
    let inst = suite
        .get(instance)
        .ok_or_else(|| format!("{}: no instance `{instance}`", suite_path.display()))?;
    let config = load_config(config)?;
    let settings: PipelineSettings = config.settings()?;
    let prompts = load_prompts(&config)?;
    let exec = executor(&config.executor)?;
    let mode = if lenient {
        ScriptMode::Lenient
    } else {
        ScriptMode::Strict
    };
    let backend = Arc::new(ScriptedBackend::load(script, mode)?);
    let directive = match branch {
        Some(BranchArg::Integral) => TypeDirective::Integral,
        Some(BranchArg::Continuous) => TypeDirective::Continuous,
        None => TypeDirective::for_instance(inst)[0],
    };
    let runner = PipelineRunner {
        backends: BackendSource::Shared(backend.clone()),
        executor: &exec,
        prompts: &prompts,
        settings: &settings,
        run_id: format!("replay-{instance}"),
    };
    let output = runner.run(&directive.apply(inst), directive, 1);
    let transcript = output
        .transcript
        .expect("pipeline runs record a transcript");
    match dest {
        Some(p) => std::fs::write(p, transcript.to_jsonl())?,
        None => write!(out, "{}", transcript.to_jsonl())?,
    }
    let status = output
        .report
        .as_ref()
        .map_or("no program".to_string(), |r| match r.objective {
            Some(y) => format!("{} objective {y}", r.status),
            None => r.status.to_string(),
        });
    eprintln!(
        "replay {instance}: {status}; {} script entries left",
        backend.remaining()
    );
    if let Some((stage, message)) = output.failure {
        return Err(format!("run failed in the {stage} stage: {message}").into());
    }
    Ok(())
}

fn validate_suite(
    path: &Path,
    run_reference: bool,
    config: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult {
    let suite: Suite = load_suite(path)?;
    writeln!(
        out,
        "{}: {} instances, schema ok",
        path.display(),
        suite.instances.len()
    )?;
    if !run_reference {
        return Ok(());
    }
    let config = load_config(config)?;
    let exec = executor(&config.executor)?;
    let limits = config.settings()?.limits();
    let mut bad = Vec::new();
    for inst in &suite.instances {
        let Some(code) = &inst.reference_code else {
            writeln!(out, "skip\t{}\tno reference code", inst.id)?;
            continue;
        };
        let program = GeneratedProgram {
            source: code.clone(),
            language_tag: config.pipeline.language_tag.clone(),
            revision: 1,
        };
        let report = exec.execute(&program, &limits)?;
        let verdict = match (report.status, report.objective) {
            (ExecutionStatus::Executable, Some(y)) if is_correct(y, inst.reference_objective)? => {
                "ok".to_string()
            }
            (ExecutionStatus::Executable, Some(y)) => {
                format!(
                    "objective {y} differs from reference {}",
                    inst.reference_objective
                )
            }
            (status, _) => format!("{status}: {}", report.stderr_excerpt.trim()),
        };
        writeln!(
            out,
            "{}\t{}",
            if verdict == "ok" { "ok" } else { "FAIL" },
            inst.id
        )?;
        if verdict != "ok" {
            bad.push(format!("instance `{}`: {verdict}", inst.id));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(bad.join("\n").into())
    }
}
