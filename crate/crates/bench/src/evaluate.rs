//! Per-instance evaluation: repeats, the dual-type rule and scoring.
//!
//! An instance whose variable type is unspecified is run twice per repeat,
//! once told its variables are integral and once continuous; the repeat
//! counts as correct if either branch matches the reference. An instance
//! is correct if any repeat is (best of N).

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use trival_core::backend::ScriptMode;
use trival_core::executor::ExecutionLimits;
use trival_core::{
    is_correct, token_totals, ChatBackend, Counters, Event, ExecutionReport, ExecutionStatus,
    Executor, Pipeline, PipelineSettings, ProblemInstance, PromptPack, ScriptedBackend, Stage,
    StageTranscript, TokenTotals, VariableType,
};

use crate::classify::ClassifiedError;

const INTEGRAL_DIRECTIVE: &str =
    "Note: all decision variables in this problem take integer values.";
const CONTINUOUS_DIRECTIVE: &str =
    "Note: all decision variables in this problem are continuous; fractional values are allowed.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeDirective {
    AsStated,
    Integral,
    Continuous,
}

impl TypeDirective {
    /// Branches to run for one repeat of `problem`.
    pub fn for_instance(problem: &ProblemInstance) -> Vec<TypeDirective> {
        match problem.variable_type {
            VariableType::Unspecified => vec![TypeDirective::Integral, TypeDirective::Continuous],
            _ => vec![TypeDirective::AsStated],
        }
    }

    pub fn branch(self) -> Option<&'static str> {
        match self {
            TypeDirective::AsStated => None,
            TypeDirective::Integral => Some("integral"),
            TypeDirective::Continuous => Some("continuous"),
        }
    }

    /// The instance as the pipeline sees it on this branch.
    pub fn apply(self, problem: &ProblemInstance) -> ProblemInstance {
        let mut p = problem.clone();
        let (text, ty) = match self {
            TypeDirective::AsStated => return p,
            TypeDirective::Integral => (INTEGRAL_DIRECTIVE, VariableType::Integral),
            TypeDirective::Continuous => (CONTINUOUS_DIRECTIVE, VariableType::Continuous),
        };
        p.description = format!("{}\n\n{text}", p.description.trim_end());
        p.variable_type = ty;
        p
    }
}

/// Why a run did not produce the reference objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    /// A stage aborted (backend failure, unusable replies, executor setup).
    PipelineError,
    NoProgram,
    RuntimeError,
    Timeout,
    AbnormalSolverStatus,
    ParseFailure,
    /// The program ran but its objective misses the reference.
    WrongObjective,
}

impl FailureClass {
    pub fn from_status(status: ExecutionStatus) -> Option<FailureClass> {
        match status {
            ExecutionStatus::Executable => None,
            ExecutionStatus::RuntimeError => Some(FailureClass::RuntimeError),
            ExecutionStatus::Timeout => Some(FailureClass::Timeout),
            ExecutionStatus::AbnormalSolverStatus => Some(FailureClass::AbnormalSolverStatus),
            ExecutionStatus::ParseFailure => Some(FailureClass::ParseFailure),
        }
    }

    /// The run ended without a usable solver result, as opposed to a wrong one.
    pub fn is_execution_error(self) -> bool {
        self != FailureClass::WrongObjective
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FailureClass::PipelineError => "pipeline_error",
            FailureClass::NoProgram => "no_program",
            FailureClass::RuntimeError => "runtime_error",
            FailureClass::Timeout => "timeout",
            FailureClass::AbnormalSolverStatus => "abnormal_solver_status",
            FailureClass::ParseFailure => "parse_failure",
            FailureClass::WrongObjective => "wrong_objective",
        }
    }
}

/// Final artifacts of a run in display form, for error classification.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalArtifacts {
    pub specification: Option<String>,
    pub formulation: Option<String>,
    pub program: Option<String>,
    pub report: Option<String>,
    pub failure: Option<String>,
}

impl FinalArtifacts {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let parts = [
            ("Semantic specification", &self.specification),
            ("Formulation", &self.formulation),
            ("Program", &self.program),
            ("Execution", &self.report),
            ("Run failure", &self.failure),
        ];
        for (title, body) in parts {
            if let Some(body) = body {
                out.push_str(&format!("## {title}\n{}\n\n", body.trim_end()));
            }
        }
        if out.is_empty() {
            out.push_str("(no artifacts were produced)\n");
        }
        out
    }
}

/// What a runner hands back for one branch of one repeat.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// Report describing the final program, if one ran.
    pub report: Option<ExecutionReport>,
    /// Stage and message of an aborted run.
    pub failure: Option<(Stage, String)>,
    pub transcript: Option<StageTranscript>,
    pub artifacts: FinalArtifacts,
}

impl RunOutput {
    /// Output of a runner that only reports an objective (for fakes).
    pub fn objective(value: f64) -> Self {
        Self {
            report: Some(ExecutionReport::executable(value)),
            ..Default::default()
        }
    }
}

/// Produces one run of one instance on one branch.
pub trait InstanceRunner: Sync {
    /// `problem` already carries the branch directive.
    fn run(&self, problem: &ProblemInstance, directive: TypeDirective, repeat: u32) -> RunOutput;
}

impl<F> InstanceRunner for F
where
    F: Fn(&ProblemInstance, TypeDirective, u32) -> RunOutput + Sync,
{
    fn run(&self, problem: &ProblemInstance, directive: TypeDirective, repeat: u32) -> RunOutput {
        self(problem, directive, repeat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub directive: TypeDirective,
    pub y_pred: Option<f64>,
    pub status: Option<ExecutionStatus>,
    pub correct: bool,
    pub failure: Option<FailureClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_detail: Option<String>,
    #[serde(default)]
    pub counters: Counters,
    #[serde(default)]
    pub tokens: TokenTotals,
    /// Transcript path relative to the results directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// One-based repeat number.
    pub repeat: u32,
    pub branches: Vec<BranchRecord>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub family: String,
    pub difficulty: trival_core::Difficulty,
    pub variable_type: VariableType,
    pub reference_objective: f64,
    pub runs: Vec<RunRecord>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ClassifiedError>,
}

impl InstanceRecord {
    pub fn branch_runs(&self) -> impl Iterator<Item = &BranchRecord> {
        self.runs.iter().flat_map(|r| r.branches.iter())
    }
}

/// Transcript location for a run, relative to the results directory.
pub fn transcript_ref(instance: &str, repeat: u32, directive: TypeDirective) -> String {
    match directive.branch() {
        Some(b) => format!("transcripts/{instance}/r{repeat}-{b}.jsonl"),
        None => format!("transcripts/{instance}/r{repeat}.jsonl"),
    }
}

/// Everything produced while evaluating one instance.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub record: InstanceRecord,
    /// Transcripts keyed by their relative path.
    pub transcripts: Vec<(String, StageTranscript)>,
    /// Artifacts of the last incorrect branch run, for classification.
    pub last_failure: Option<FinalArtifacts>,
}

pub fn score_branch(
    problem: &ProblemInstance,
    directive: TypeDirective,
    output: &RunOutput,
) -> BranchRecord {
    let status = output.report.as_ref().map(|r| r.status);
    let y_pred = output
        .report
        .as_ref()
        .filter(|r| r.status == ExecutionStatus::Executable)
        .and_then(|r| r.objective);
    let (correct, failure, detail) = if let Some((stage, message)) = &output.failure {
        (
            false,
            Some(FailureClass::PipelineError),
            Some(format!("{stage}: {message}")),
        )
    } else {
        match (&output.report, y_pred) {
            (None, _) => (false, Some(FailureClass::NoProgram), None),
            (Some(_), Some(y)) => match is_correct(y, problem.reference_objective) {
                Ok(true) => (true, None, None),
                Ok(false) => (false, Some(FailureClass::WrongObjective), None),
                Err(e) => (false, Some(FailureClass::ParseFailure), Some(e.to_string())),
            },
            (Some(r), None) => (
                false,
                Some(FailureClass::from_status(r.status).unwrap_or(FailureClass::ParseFailure)),
                None,
            ),
        }
    };
    let (counters, tokens) = match &output.transcript {
        Some(t) => (t.counters.clone(), token_totals(t)),
        None => (Counters::default(), TokenTotals::default()),
    };
    BranchRecord {
        directive,
        y_pred,
        status,
        correct,
        failure,
        failure_detail: detail,
        counters,
        tokens,
        transcript: None,
    }
}

/// Runs `problem` `repeats` times (per branch) and scores it.
pub fn evaluate_instance(
    problem: &ProblemInstance,
    runner: &dyn InstanceRunner,
    repeats: u32,
) -> Evaluation {
    assert!(repeats >= 1, "at least one repeat");
    let directives = TypeDirective::for_instance(problem);
    let mut runs = Vec::new();
    let mut transcripts = Vec::new();
    let mut last_failure = None;
    for repeat in 1..=repeats {
        let mut branches = Vec::new();
        for &directive in &directives {
            let posed = directive.apply(problem);
            let output = runner.run(&posed, directive, repeat);
            let mut record = score_branch(problem, directive, &output);
            if !record.correct {
                last_failure = Some(output.artifacts.clone());
            }
            if let Some(t) = output.transcript {
                let path = transcript_ref(&problem.id, repeat, directive);
                record.transcript = Some(path.clone());
                transcripts.push((path, t));
            }
            branches.push(record);
        }
        let correct = branches.iter().any(|b| b.correct);
        runs.push(RunRecord {
            repeat,
            branches,
            correct,
        });
    }
    let correct = runs.iter().any(|r| r.correct);
    Evaluation {
        record: InstanceRecord {
            id: problem.id.clone(),
            family: problem.family.clone(),
            difficulty: problem.difficulty,
            variable_type: problem.variable_type,
            reference_objective: problem.reference_objective,
            runs,
            correct,
            error: None,
        },
        transcripts,
        last_failure: if correct { None } else { last_failure },
    }
}

/// Evaluates every instance with up to `parallelism` worker threads. The
/// result keeps suite order regardless of completion order.
pub fn evaluate_all(
    instances: &[ProblemInstance],
    runner: &dyn InstanceRunner,
    repeats: u32,
    parallelism: usize,
) -> Vec<Evaluation> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Evaluation>>> = Mutex::new(vec![None; instances.len()]);
    let workers = parallelism.clamp(1, instances.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= instances.len() {
                    break;
                }
                let e = evaluate_instance(&instances[i], runner, repeats);
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(e);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|e| e.expect("every instance evaluated"))
        .collect()
}

/// Where a run's backend comes from.
#[derive(Clone)]
pub enum BackendSource {
    /// One backend shared by all runs.
    Shared(Arc<dyn ChatBackend>),
    /// A fresh scripted backend per run, read from
    /// `<dir>/<instance>.<branch>.jsonl` or else `<dir>/<instance>.jsonl`.
    ScriptDir { dir: PathBuf, mode: ScriptMode },
}

impl BackendSource {
    fn backend_for(
        &self,
        instance: &str,
        directive: TypeDirective,
    ) -> Result<Arc<dyn ChatBackend>, String> {
        match self {
            BackendSource::Shared(b) => Ok(b.clone()),
            BackendSource::ScriptDir { dir, mode } => {
                let mut candidates = Vec::new();
                if let Some(branch) = directive.branch() {
                    candidates.push(dir.join(format!("{instance}.{branch}.jsonl")));
                }
                candidates.push(dir.join(format!("{instance}.jsonl")));
                let path = candidates
                    .iter()
                    .find(|p| p.is_file())
                    .ok_or_else(|| format!("no script for `{instance}` in {}", dir.display()))?;
                ScriptedBackend::load(path, *mode)
                    .map(|b| Arc::new(b) as Arc<dyn ChatBackend>)
                    .map_err(|e| e.to_string())
            }
        }
    }
}

/// Runs the real pipeline. A final program that was changed after its last
/// execution is executed once more so every run is scored on the program it
/// returns.
pub struct PipelineRunner<'a> {
    pub backends: BackendSource,
    pub executor: &'a dyn Executor,
    pub prompts: &'a PromptPack,
    pub settings: &'a PipelineSettings,
    pub run_id: String,
}

impl PipelineRunner<'_> {
    fn limits(&self) -> ExecutionLimits {
        self.settings.limits()
    }
}

impl InstanceRunner for PipelineRunner<'_> {
    fn run(&self, problem: &ProblemInstance, directive: TypeDirective, repeat: u32) -> RunOutput {
        let run_id = format!("{}-r{repeat}", self.run_id);
        let mut transcript = StageTranscript::new(&run_id, &problem.id);
        transcript.header.variant = self.settings.ablation.name();
        transcript.header.branch = directive.branch().map(str::to_string);

        let backend = match self.backends.backend_for(&problem.id, directive) {
            Ok(b) => b,
            Err(message) => {
                transcript.record(Event::RunFailed {
                    stage: Stage::Semantic,
                    error: message.clone(),
                });
                return RunOutput {
                    failure: Some((Stage::Semantic, message.clone())),
                    transcript: Some(transcript),
                    artifacts: FinalArtifacts {
                        failure: Some(message),
                        ..Default::default()
                    },
                    ..Default::default()
                };
            }
        };
        let pipeline = match Pipeline::new(&*backend, self.executor, self.prompts, self.settings) {
            Ok(p) => p,
            Err(e) => {
                return RunOutput {
                    failure: Some((Stage::Semantic, e.to_string())),
                    ..Default::default()
                }
            }
        };
        let outcome = pipeline.run_with(problem, transcript);
        let current = outcome.report_is_current();
        let mut transcript = outcome.transcript;
        let mut artifacts = FinalArtifacts {
            specification: outcome.specification.as_ref().map(|s| s.render()),
            formulation: outcome.formulation.as_ref().map(|m| m.render()),
            program: outcome.program.as_ref().map(|p| p.source.clone()),
            report: None,
            failure: outcome
                .failure
                .as_ref()
                .map(|f| format!("{} stage: {}", f.stage, f.error)),
        };
        let failure = outcome.failure.map(|f| (f.stage, f.error.to_string()));
        let mut report = outcome.report;
        if failure.is_none() && !current {
            if let Some(program) = &outcome.program {
                match self.executor.execute(program, &self.limits()) {
                    Ok(r) => {
                        transcript.record(Event::CodeFinalExecute {
                            revision: program.revision,
                            report: r.clone(),
                        });
                        report = Some(r);
                    }
                    Err(e) => {
                        let message = format!("final execution failed: {e}");
                        transcript.record(Event::RunFailed {
                            stage: Stage::Code,
                            error: message.clone(),
                        });
                        artifacts.failure = Some(message.clone());
                        return RunOutput {
                            report: None,
                            failure: Some((Stage::Code, message)),
                            transcript: Some(transcript),
                            artifacts,
                        };
                    }
                }
            }
        }
        artifacts.report = report.as_ref().map(|r| r.render());
        RunOutput {
            report,
            failure,
            transcript: Some(transcript),
            artifacts,
        }
    }
}
