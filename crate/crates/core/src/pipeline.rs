//! End-to-end driver over the three stages, and ablation variants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ask::{StageContext, StageError};
use crate::backend::{ChatBackend, GenerationSettings};
use crate::budget::{BudgetError, PipelineBudgets};
use crate::code::{code_stage_into, CodeOptions, CodeState};
use crate::executor::{ExecutionLimits, Executor};
use crate::formulation::{formulation_stage_into, FormulationOptions, Grounding};
use crate::model::{
    ExecutionReport, GeneratedProgram, MathFormulation, ProblemInstance, SemanticSpecification,
};
use crate::prompts::PromptPack;
use crate::semantic::semantic_stage_into;
use crate::transcript::{Event, StageTranscript};
use crate::verdict::{Stage, StageVerdict};

/// Which loops and stages a run uses. Everything is on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub semantic_stage: bool,
    pub semantic_validation: bool,
    pub formulation_stage: bool,
    pub formulation_validation: bool,
    pub multi_expert: bool,
    pub code_validation: bool,
    pub self_correction: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            semantic_stage: true,
            semantic_validation: true,
            formulation_stage: true,
            formulation_validation: true,
            multi_expert: true,
            code_validation: true,
            self_correction: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("contradictory ablation: {0}")]
    Contradiction(String),
    #[error("unknown ablation preset `{0}` (known: {known})", known = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

pub const PRESETS: &[&str] = &[
    "full",
    "no-semantic-validation",
    "no-formulation-validation",
    "no-code-validation",
    "no-validation",
    "no-semantic-stage",
    "no-formulation-stage",
    "code-only",
    "no-multi-expert",
    "no-self-correction",
];

impl AblationFlags {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut f = Self::default();
        match name.trim() {
            "full" => {}
            "no-semantic-validation" => f.semantic_validation = false,
            "no-formulation-validation" => f.formulation_validation = false,
            "no-code-validation" => f.code_validation = false,
            "no-validation" => {
                f.semantic_validation = false;
                f.formulation_validation = false;
                f.code_validation = false;
            }
            "no-semantic-stage" => {
                f.semantic_stage = false;
                f.semantic_validation = false;
            }
            "no-formulation-stage" => {
                f.formulation_stage = false;
                f.formulation_validation = false;
                f.multi_expert = false;
            }
            "code-only" => {
                f.semantic_stage = false;
                f.semantic_validation = false;
                f.formulation_stage = false;
                f.formulation_validation = false;
                f.multi_expert = false;
            }
            "no-multi-expert" => f.multi_expert = false,
            "no-self-correction" => f.self_correction = false,
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        }
        Ok(f)
    }

    /// Combines comma-separated presets; each switches its parts off.
    pub fn parse_list(list: &str) -> Result<Self, ConfigError> {
        let mut f = Self::default();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let p = Self::preset(name)?;
            f.semantic_stage &= p.semantic_stage;
            f.semantic_validation &= p.semantic_validation;
            f.formulation_stage &= p.formulation_stage;
            f.formulation_validation &= p.formulation_validation;
            f.multi_expert &= p.multi_expert;
            f.code_validation &= p.code_validation;
            f.self_correction &= p.self_correction;
        }
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.semantic_stage && self.semantic_validation {
            return Err(ConfigError::Contradiction(
                "semantic validation is on but the semantic stage is off".into(),
            ));
        }
        if !self.formulation_stage && self.formulation_validation {
            return Err(ConfigError::Contradiction(
                "formulation validation is on but the formulation stage is off".into(),
            ));
        }
        if !self.formulation_stage && self.multi_expert {
            return Err(ConfigError::Contradiction(
                "multi-expert exploration is on but the formulation stage is off".into(),
            ));
        }
        Ok(())
    }

    /// Short name for reports: the matching preset, or the list of parts
    /// switched off.
    pub fn name(&self) -> String {
        if let Some(p) = PRESETS
            .iter()
            .find(|p| Self::preset(p).is_ok_and(|f| f == *self))
        {
            return p.to_string();
        }
        let parts = [
            (self.semantic_stage, "semantic-stage"),
            (self.semantic_validation, "semantic-validation"),
            (self.formulation_stage, "formulation-stage"),
            (self.formulation_validation, "formulation-validation"),
            (self.multi_expert, "multi-expert"),
            (self.code_validation, "code-validation"),
            (self.self_correction, "self-correction"),
        ];
        parts
            .iter()
            .filter(|(on, _)| !on)
            .map(|(_, n)| format!("no-{n}"))
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Everything about a run that is configuration rather than collaborators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub budgets: PipelineBudgets,
    pub ablation: AblationFlags,
    pub generation: GenerationSettings,
    pub parallel_experts: bool,
    pub language_tag: String,
    pub output_cap_bytes: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            budgets: PipelineBudgets::default(),
            ablation: AblationFlags::default(),
            generation: GenerationSettings::default(),
            parallel_experts: false,
            language_tag: "python".into(),
            output_cap_bytes: ExecutionLimits::default().output_cap_bytes,
        }
    }
}

impl PipelineSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.budgets.validate()?;
        self.ablation.validate()
    }

    pub fn limits(&self) -> ExecutionLimits {
        ExecutionLimits {
            timeout_secs: self.budgets.execution_timeout_secs,
            output_cap_bytes: self.output_cap_bytes,
        }
    }
}

/// A configured pipeline. Cheap to share across threads; each
/// [`Pipeline::run`] owns its own transcript.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    backend: &'a dyn ChatBackend,
    executor: &'a dyn Executor,
    prompts: &'a PromptPack,
    settings: &'a PipelineSettings,
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub stage: Stage,
    pub error: StageError,
}

/// Artifacts and transcript of one run. Failed runs keep whatever was
/// built before the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub specification: Option<SemanticSpecification>,
    pub formulation: Option<MathFormulation>,
    pub program: Option<GeneratedProgram>,
    /// Last execution inside the code loop.
    pub report: Option<ExecutionReport>,
    /// Program revision that `report` belongs to.
    pub report_revision: Option<u32>,
    /// Last code verdict, if the code was validated.
    pub code_verdict: Option<StageVerdict>,
    pub failure: Option<RunFailure>,
    pub transcript: StageTranscript,
}

impl PipelineOutcome {
    /// The report describes the returned program (it was not revised after
    /// its last execution).
    pub fn report_is_current(&self) -> bool {
        match (&self.program, self.report_revision) {
            (Some(p), Some(r)) => p.revision == r,
            _ => false,
        }
    }
}

impl<'a> Pipeline<'a> {
    pub fn new(
        backend: &'a dyn ChatBackend,
        executor: &'a dyn Executor,
        prompts: &'a PromptPack,
        settings: &'a PipelineSettings,
    ) -> Result<Self, ConfigError> {
        settings.validate()?;
        Ok(Self {
            backend,
            executor,
            prompts,
            settings,
        })
    }

    pub fn settings(&self) -> &PipelineSettings {
        self.settings
    }

    pub fn context(&self) -> StageContext<'a> {
        StageContext {
            backend: self.backend,
            prompts: self.prompts,
            budgets: &self.settings.budgets,
            generation: &self.settings.generation,
        }
    }

    pub fn run(&self, problem: &ProblemInstance, run_id: &str) -> PipelineOutcome {
        let mut transcript = StageTranscript::new(run_id, &problem.id);
        transcript.header.variant = self.settings.ablation.name();
        self.run_with(problem, transcript)
    }

    /// Like [`Pipeline::run`] with a caller-prepared transcript (header
    /// fields such as the branch already set).
    pub fn run_with(
        &self,
        problem: &ProblemInstance,
        transcript: StageTranscript,
    ) -> PipelineOutcome {
        let mut transcript = transcript;
        let ctx = self.context();
        let flags = self.settings.ablation;
        let mut specification = None;
        let mut formulation = None;
        let mut code = CodeState::default();

        let result = (|| -> Result<(), RunFailure> {
            let fail = |stage| move |error| RunFailure { stage, error };
            if flags.semantic_stage {
                semantic_stage_into(
                    &ctx,
                    problem,
                    flags.semantic_validation,
                    &mut specification,
                    &mut transcript,
                )
                .map_err(fail(Stage::Semantic))?;
            } else {
                problem.validate().map_err(|e| RunFailure {
                    stage: Stage::Semantic,
                    error: e.into(),
                })?;
            }
            let grounding = match &specification {
                Some(s) => Grounding::Specification(s),
                None => Grounding::Problem(problem),
            };
            if flags.formulation_stage {
                let options = FormulationOptions {
                    validation: flags.formulation_validation,
                    multi_expert: flags.multi_expert,
                    parallel_experts: self.settings.parallel_experts,
                };
                formulation_stage_into(
                    &ctx,
                    problem,
                    &grounding,
                    options,
                    &mut formulation,
                    &mut transcript,
                )
                .map_err(fail(Stage::Formulation))?;
            }
            let options = CodeOptions {
                validation: flags.code_validation,
                self_correction: flags.self_correction,
                language_tag: self.settings.language_tag.clone(),
                limits: self.settings.limits(),
            };
            code.formulation = formulation.clone();
            code_stage_into(
                &ctx,
                problem,
                &grounding,
                self.executor,
                &options,
                &mut code,
                &mut transcript,
            )
            .map_err(fail(Stage::Code))
        })();

        let failure = result.err();
        if let Some(f) = &failure {
            transcript.record(Event::RunFailed {
                stage: f.stage,
                error: f.error.to_string(),
            });
        }
        if code.formulation.is_some() {
            formulation = code.formulation.clone();
        }
        let (report_revision, report) = match code.report {
            Some((rev, r)) => (Some(rev), Some(r)),
            None => (None, None),
        };
        PipelineOutcome {
            specification,
            formulation,
            program: code.program,
            report,
            report_revision,
            code_verdict: code.verdict,
            failure,
            transcript,
        }
    }
}

/// Runs `problem` once through a pipeline built from the given parts.
pub fn run_pipeline(
    problem: &ProblemInstance,
    backend: &dyn ChatBackend,
    executor: &dyn Executor,
    prompts: &PromptPack,
    settings: &PipelineSettings,
    run_id: &str,
) -> Result<PipelineOutcome, ConfigError> {
    Ok(Pipeline::new(backend, executor, prompts, settings)?.run(problem, run_id))
}
