//! Code stage: a tool-using agent writes the solver program, execution
//! feedback drives self-correction, and a validator attributes remaining
//! defects to the code or to the formulation.

mod tools;
mod workspace;

pub use tools::{format_action, parse_agent_reply, AgentMove};
pub use workspace::{replay, CodeWorkspace, ToolAction, ToolError};

use crate::ask::{StageContext, StageError};
use crate::backend::{complete, Message};
use crate::executor::{ExecutionLimits, Executor};
use crate::formulation::{revise_formulation, Grounding};
use crate::gate::{run_gate, GateArtifact, ValidationGate};
use crate::model::{ExecutionReport, GeneratedProgram, MathFormulation, ProblemInstance};
use crate::transcript::{AgentPhase, Event, RevisionOrigin, StageTranscript};
use crate::verdict::{Decision, Stage, StageVerdict};

const NO_FORMULATION: &str =
    "(no formulation is available: derive the model directly from the problem description)";

#[derive(Debug, Clone, PartialEq)]
pub struct CodeOptions {
    pub validation: bool,
    pub self_correction: bool,
    pub language_tag: String,
    pub limits: ExecutionLimits,
}

impl Default for CodeOptions {
    fn default() -> Self {
        Self {
            validation: true,
            self_correction: true,
            language_tag: "python".into(),
            limits: ExecutionLimits::default(),
        }
    }
}

fn system_prompt(ctx: &StageContext<'_>) -> Result<String, StageError> {
    ctx.render(
        "code_system",
        &[
            ("tools", ctx.prompts.raw("code_tools")?),
            ("knowledge", ctx.prompts.raw("solver_knowledge")?),
        ],
    )
}

fn purpose(phase: AgentPhase) -> &'static str {
    match phase {
        AgentPhase::Generate => "code.agent",
        AgentPhase::SelfCorrect => "code.self_correct",
        AgentPhase::Revise => "code.revise",
    }
}

/// Runs one reason/act loop against `workspace`, bounded by the agent-step
/// budget. Running out of steps keeps the current program with a warning; an
/// empty program at that point is an error.
fn agent_loop(
    ctx: &StageContext<'_>,
    phase: AgentPhase,
    task: String,
    workspace: &mut CodeWorkspace,
    transcript: &mut StageTranscript,
) -> Result<(), StageError> {
    let purpose = purpose(phase);
    let mut messages = vec![Message::system(system_prompt(ctx)?), Message::user(task)];
    for _ in 0..ctx.budgets.agent_steps {
        let request = ctx.request(purpose, messages.clone());
        let reply =
            complete(ctx.backend, &request, transcript).map_err(|source| StageError::Backend {
                purpose: purpose.to_string(),
                source,
            })?;
        transcript.counters.agent_steps += 1;
        let answer = match parse_agent_reply(&reply.text) {
            Ok(AgentMove::Done) if !workspace.is_empty() => return Ok(()),
            Ok(AgentMove::Done) => {
                "REJECTED: the program is empty. Write it with TOOL write before finishing."
                    .to_string()
            }
            Ok(AgentMove::Tool(action)) => {
                let result = workspace.apply(&action);
                let message = match &result {
                    Ok(text) if action == ToolAction::Read => {
                        if text.is_empty() {
                            "The program is empty.".to_string()
                        } else {
                            format!(
                                "Current program (revision {}):\n{text}",
                                workspace.revision()
                            )
                        }
                    }
                    Ok(_) => format!("OK: program updated to revision {}.", workspace.revision()),
                    Err(e) => format!("REJECTED: {e}"),
                };
                transcript.record(Event::CodeTool {
                    phase,
                    action,
                    accepted: result.is_ok(),
                    message: message.lines().next().unwrap_or("").to_string(),
                });
                message
            }
            Err(error) => {
                transcript.record(Event::ParseRetry {
                    purpose: purpose.to_string(),
                    error: error.clone(),
                });
                ctx.render("reminder_tool", &[("error", &error)])?
            }
        };
        messages.push(Message::assistant(reply.text));
        messages.push(Message::user(answer));
    }
    if workspace.is_empty() {
        return Err(StageError::Agent(format!(
            "`{purpose}` used all {} agent steps without writing a program",
            ctx.budgets.agent_steps
        )));
    }
    transcript.record(Event::Warning {
        stage: Some(Stage::Code),
        message: format!(
            "`{purpose}` used all {} agent steps without DONE; keeping the current program",
            ctx.budgets.agent_steps
        ),
    });
    Ok(())
}

pub fn generate_solver_code(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    formulation: Option<&MathFormulation>,
    workspace: &mut CodeWorkspace,
    language_tag: &str,
    transcript: &mut StageTranscript,
) -> Result<GeneratedProgram, StageError> {
    if !workspace.is_empty() {
        return Err(StageError::Precondition(
            "code generation needs an empty workspace".into(),
        ));
    }
    let rendered = formulation.map(MathFormulation::render);
    let task = ctx.render(
        "code_generate",
        &[
            ("problem", &problem.description),
            ("formulation", rendered.as_deref().unwrap_or(NO_FORMULATION)),
        ],
    )?;
    agent_loop(ctx, AgentPhase::Generate, task, workspace, transcript)?;
    Ok(workspace.program(language_tag))
}

/// Repairs a program that did not run to completion, seeded with the
/// execution feedback.
pub fn self_correct_code(
    ctx: &StageContext<'_>,
    report: &ExecutionReport,
    workspace: &mut CodeWorkspace,
    language_tag: &str,
    transcript: &mut StageTranscript,
) -> Result<GeneratedProgram, StageError> {
    if report.status.ran_to_completion() {
        return Err(StageError::Precondition(format!(
            "self-correction is for programs that did not run to completion (status {})",
            report.status
        )));
    }
    let task = ctx.render(
        "code_self_correct",
        &[("program", workspace.text()), ("report", &report.render())],
    )?;
    agent_loop(ctx, AgentPhase::SelfCorrect, task, workspace, transcript)?;
    Ok(workspace.program(language_tag))
}

pub fn validate_solver_code(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    formulation: Option<&MathFormulation>,
    program: &GeneratedProgram,
    report: &ExecutionReport,
    transcript: &mut StageTranscript,
) -> Result<StageVerdict, StageError> {
    run_gate(
        &ValidationGate::new(Stage::Code, *ctx),
        &GateArtifact::Code {
            problem,
            formulation,
            program,
            report,
        },
        transcript,
    )
}

/// Revises the program in place according to code-validator feedback.
pub fn revise_solver_code(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    formulation: Option<&MathFormulation>,
    feedback: &str,
    workspace: &mut CodeWorkspace,
    language_tag: &str,
    transcript: &mut StageTranscript,
) -> Result<GeneratedProgram, StageError> {
    if feedback.trim().is_empty() {
        return Err(StageError::Precondition(
            "code revision needs non-empty feedback".into(),
        ));
    }
    let rendered = formulation.map(MathFormulation::render);
    let task = ctx.render(
        "code_revise",
        &[
            ("problem", &problem.description),
            ("formulation", rendered.as_deref().unwrap_or(NO_FORMULATION)),
            ("program", workspace.text()),
            ("feedback", feedback),
        ],
    )?;
    agent_loop(ctx, AgentPhase::Revise, task, workspace, transcript)?;
    Ok(workspace.program(language_tag))
}

/// Artifacts of the code stage, kept current while the stage runs so a
/// failed run still exposes what it had.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodeState {
    pub program: Option<GeneratedProgram>,
    pub formulation: Option<MathFormulation>,
    /// Last execution and the program revision it ran.
    pub report: Option<(u32, ExecutionReport)>,
    pub verdict: Option<StageVerdict>,
}

pub fn run_code_stage(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    grounding: &Grounding<'_>,
    formulation: Option<MathFormulation>,
    executor: &dyn Executor,
    options: &CodeOptions,
    transcript: &mut StageTranscript,
) -> Result<CodeState, StageError> {
    let mut state = CodeState {
        formulation,
        ..Default::default()
    };
    code_stage_into(
        ctx, problem, grounding, executor, options, &mut state, transcript,
    )?;
    Ok(state)
}

pub(crate) fn code_stage_into(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    grounding: &Grounding<'_>,
    executor: &dyn Executor,
    options: &CodeOptions,
    state: &mut CodeState,
    transcript: &mut StageTranscript,
) -> Result<(), StageError> {
    let tag = options.language_tag.as_str();
    let budgets = ctx.budgets;
    let mut workspace = CodeWorkspace::new();
    let mut lineage = u32::from(state.formulation.is_some());
    transcript.counters.formulation_lineage = lineage;

    let program = generate_solver_code(
        ctx,
        problem,
        state.formulation.as_ref(),
        &mut workspace,
        tag,
        transcript,
    )?;
    transcript.counters.code_generations += 1;
    transcript.record(Event::CodeGenerate {
        program: program.clone(),
        lineage,
    });
    state.program = Some(program);

    let executions = if options.self_correction {
        budgets.self_correction_rounds
    } else {
        1
    };
    for iteration in 1..=budgets.code_rounds {
        transcript.counters.code_iterations += 1;
        let mut report = None;
        for round in 1..=executions {
            let program = state.program.as_ref().expect("generated above");
            let r = executor.execute(program, &options.limits)?;
            transcript.counters.execution_rounds += 1;
            transcript.record(Event::CodeExecute {
                iteration,
                round,
                revision: program.revision,
                report: r.clone(),
            });
            state.report = Some((program.revision, r.clone()));
            let done = r.status.ran_to_completion();
            report = Some(r);
            if done || !options.self_correction {
                break;
            }
            let fixed = self_correct_code(
                ctx,
                report.as_ref().expect("set above"),
                &mut workspace,
                tag,
                transcript,
            )?;
            transcript.counters.self_corrections += 1;
            transcript.record(Event::CodeSelfCorrect {
                program: fixed.clone(),
            });
            state.program = Some(fixed);
        }
        let report = report.expect("at least one execution");
        if !report.status.ran_to_completion() {
            break;
        }
        if !options.validation {
            break;
        }
        let program = state.program.as_ref().expect("generated above");
        let verdict = validate_solver_code(
            ctx,
            problem,
            state.formulation.as_ref(),
            program,
            &report,
            transcript,
        )?;
        transcript.record(Event::CodeValidate {
            iteration,
            verdict: verdict.clone(),
        });
        state.verdict = Some(verdict.clone());
        let feedback = verdict.feedback().render();
        let decision = match (verdict.result(), state.formulation.is_some()) {
            (Decision::FormulationRevise, false) => {
                transcript.record(Event::Warning {
                    stage: Some(Stage::Code),
                    message: "formulation_revise without a formulation; revising the code instead"
                        .into(),
                });
                Decision::CodeRevise
            }
            (d, _) => d,
        };
        match decision {
            Decision::Accept => break,
            Decision::CodeRevise => {
                let revised = revise_solver_code(
                    ctx,
                    problem,
                    state.formulation.as_ref(),
                    &feedback,
                    &mut workspace,
                    tag,
                    transcript,
                )?;
                transcript.counters.code_revisions += 1;
                transcript.record(Event::CodeRevise {
                    program: revised.clone(),
                });
                state.program = Some(revised);
            }
            Decision::FormulationRevise => {
                let current = state.formulation.as_ref().expect("checked above");
                let revised = revise_formulation(ctx, grounding, current, &feedback, transcript)?;
                transcript.counters.formulation_revisions_from_code += 1;
                transcript.record(Event::FormulationRevise {
                    origin: RevisionOrigin::CodeValidator,
                    formulation: revised.clone(),
                });
                state.formulation = Some(revised);
                lineage += 1;
                transcript.counters.formulation_lineage = lineage;

                workspace.reset();
                let program = generate_solver_code(
                    ctx,
                    problem,
                    state.formulation.as_ref(),
                    &mut workspace,
                    tag,
                    transcript,
                )?;
                transcript.counters.code_generations += 1;
                transcript.record(Event::CodeGenerate {
                    program: program.clone(),
                    lineage,
                });
                state.program = Some(program);
            }
            other => unreachable!("code verdict cannot be {other:?}"),
        }
    }
    Ok(())
}
