//! Validation gates usable on their own.
//!
//! The stage validators of the pipeline are thin wrappers over [`run_gate`],
//! so an external modeling pipeline wrapped with a gate sees exactly the same
//! prompts and verdict grammar.

use crate::ask::{ask_verdict, GateError, StageContext, StageError};
use crate::backend::Message;
use crate::model::{
    ExecutionReport, GeneratedProgram, MathFormulation, ProblemInstance, SemanticSpecification,
};
use crate::transcript::EventSink;
use crate::verdict::{Stage, StageVerdict};

const NO_SPECIFICATION: &str =
    "(none: the formulation was built from the problem description directly)";
const NO_FORMULATION: &str =
    "(none: the program was written from the problem description directly)";

/// Artifact presented to a gate, together with the problem it answers.
#[derive(Debug, Clone, Copy)]
pub enum GateArtifact<'a> {
    Semantic {
        problem: &'a ProblemInstance,
        specification: &'a SemanticSpecification,
    },
    Formulation {
        problem: &'a ProblemInstance,
        specification: Option<&'a SemanticSpecification>,
        formulation: &'a MathFormulation,
    },
    /// A formulation in whatever text form an external pipeline produces.
    FormulationText {
        problem: &'a ProblemInstance,
        text: &'a str,
    },
    Code {
        problem: &'a ProblemInstance,
        formulation: Option<&'a MathFormulation>,
        program: &'a GeneratedProgram,
        report: &'a ExecutionReport,
    },
}

impl GateArtifact<'_> {
    pub fn stage(&self) -> Stage {
        match self {
            GateArtifact::Semantic { .. } => Stage::Semantic,
            GateArtifact::Formulation { .. } | GateArtifact::FormulationText { .. } => {
                Stage::Formulation
            }
            GateArtifact::Code { .. } => Stage::Code,
        }
    }
}

/// A validator bound to one stage and one backend.
#[derive(Clone, Copy)]
pub struct ValidationGate<'a> {
    stage: Stage,
    ctx: StageContext<'a>,
}

impl<'a> ValidationGate<'a> {
    pub fn new(stage: Stage, ctx: StageContext<'a>) -> Self {
        Self { stage, ctx }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }
}

/// Asks the gate's validator for a verdict on `artifact`. The artifact is only
/// read. Backend failures and replies that stay unparseable after the
/// configured retries come back as errors.
pub fn run_gate(
    gate: &ValidationGate<'_>,
    artifact: &GateArtifact<'_>,
    sink: &mut dyn EventSink,
) -> Result<StageVerdict, GateError> {
    if artifact.stage() != gate.stage {
        return Err(StageError::StageMismatch {
            gate: gate.stage,
            artifact: artifact.stage(),
        });
    }
    let ctx = &gate.ctx;
    let prompt = match artifact {
        GateArtifact::Semantic {
            problem,
            specification,
        } => ctx.render(
            "semantic_validate",
            &[
                ("problem", &problem.description),
                ("specification", &specification.render()),
            ],
        )?,
        GateArtifact::Formulation {
            problem,
            specification,
            formulation,
        } => {
            let spec = specification.map(|s| s.render());
            ctx.render(
                "formulation_validate",
                &[
                    ("problem", &problem.description),
                    ("specification", spec.as_deref().unwrap_or(NO_SPECIFICATION)),
                    ("formulation", &formulation.render()),
                ],
            )?
        }
        GateArtifact::FormulationText { problem, text } => ctx.render(
            "formulation_validate",
            &[
                ("problem", &problem.description),
                ("specification", NO_SPECIFICATION),
                ("formulation", text),
            ],
        )?,
        GateArtifact::Code {
            problem,
            formulation,
            program,
            report,
        } => {
            if !report.status.ran_to_completion() {
                return Err(StageError::Precondition(format!(
                    "code validation needs a program that ran to completion (status {})",
                    report.status
                )));
            }
            let m = formulation.map(|m| m.render());
            ctx.render(
                "code_validate",
                &[
                    ("problem", &problem.description),
                    ("formulation", m.as_deref().unwrap_or(NO_FORMULATION)),
                    ("program", &program.source),
                    ("report", &report.render()),
                ],
            )?
        }
    };
    ask_verdict(ctx, sink, gate.stage, vec![Message::user(prompt)])
}

/// Result of wrapping an external step with a gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedOutcome<A> {
    pub artifact: A,
    pub verdicts: Vec<StageVerdict>,
}

impl<A> GatedOutcome<A> {
    pub fn accepted(&self) -> bool {
        self.verdicts.last().is_some_and(StageVerdict::is_accept)
    }
}

/// Wraps an external modeling step with a formulation gate: `initial` is
/// validated up to `rounds` times and every non-accept verdict goes to
/// `revise` for a new formulation text. When the rounds run out the current
/// text is returned as is.
pub fn gate_formulation_text(
    gate: &ValidationGate<'_>,
    problem: &ProblemInstance,
    rounds: u32,
    initial: String,
    mut revise: impl FnMut(&str, &StageVerdict) -> Result<String, StageError>,
    sink: &mut dyn EventSink,
) -> Result<GatedOutcome<String>, StageError> {
    let mut artifact = initial;
    let mut verdicts: Vec<StageVerdict> = Vec::new();
    for _ in 0..rounds {
        let verdict = run_gate(
            gate,
            &GateArtifact::FormulationText {
                problem,
                text: &artifact,
            },
            sink,
        )?;
        let accept = verdict.is_accept();
        verdicts.push(verdict);
        if accept {
            break;
        }
        artifact = revise(&artifact, verdicts.last().expect("just pushed"))?;
    }
    Ok(GatedOutcome { artifact, verdicts })
}
