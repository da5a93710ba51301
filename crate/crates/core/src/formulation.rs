//! Formulation stage: multi-expert candidate construction, selection,
//! validation, and the two revision modes.

use crate::ask::{ask_json, StageContext, StageError};
use crate::backend::Message;
use crate::gate::{run_gate, GateArtifact, ValidationGate};
use crate::model::{
    Candidate, CandidateSet, MathFormulation, ProblemInstance, SemanticSpecification,
};
use crate::prompts::ExpertSpec;
use crate::transcript::{Event, EventSink, RevisionOrigin, StageTranscript};
use crate::verdict::{Decision, Stage, StageVerdict};

/// What the formulation is built from: the semantic specification, or the
/// raw problem text when the semantic stage is switched off.
#[derive(Debug, Clone, Copy)]
pub enum Grounding<'a> {
    Specification(&'a SemanticSpecification),
    Problem(&'a ProblemInstance),
}

impl Grounding<'_> {
    pub fn render(&self) -> String {
        match self {
            Grounding::Specification(s) => format!("Semantic specification:\n{}", s.render()),
            Grounding::Problem(p) => format!("Problem:\n{}", p.description),
        }
    }

    pub fn specification(&self) -> Option<&SemanticSpecification> {
        match self {
            Grounding::Specification(s) => Some(s),
            Grounding::Problem(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormulationOptions {
    pub validation: bool,
    /// Use the configured expert panel; otherwise a single generalist.
    pub multi_expert: bool,
    /// Issue the expert calls of one construction concurrently.
    pub parallel_experts: bool,
}

impl Default for FormulationOptions {
    fn default() -> Self {
        Self {
            validation: true,
            multi_expert: true,
            parallel_experts: false,
        }
    }
}

fn check_formulation(m: &MathFormulation) -> Result<(), String> {
    m.validate().map_err(|e| e.to_string())
}

fn ask_expert(
    ctx: &StageContext<'_>,
    grounding: &Grounding<'_>,
    expert: &ExpertSpec,
    feedback: Option<&str>,
    sink: &mut dyn EventSink,
) -> Result<MathFormulation, StageError> {
    let feedback_block = feedback
        .map(|f| format!("\nThe previous formulation was rejected. Address this feedback:\n{f}\n"))
        .unwrap_or_default();
    let prompt = ctx.render(
        "formulation_expert",
        &[
            ("perspective", ctx.prompts.raw(&expert.template)?),
            ("grounding", &grounding.render()),
            ("feedback", &feedback_block),
            ("format", ctx.prompts.raw("formulation_format")?),
        ],
    )?;
    ask_json(
        ctx,
        sink,
        &format!("formulation.expert.{}", expert.tag),
        vec![Message::user(prompt)],
        check_formulation,
    )
}

/// Candidates from one round of expert exploration, in expert order, and the
/// tags of experts whose replies stayed unusable.
#[derive(Debug, Clone, PartialEq)]
pub struct Construction {
    pub candidates: CandidateSet,
    pub dropped: Vec<String>,
}

/// One call per expert. `feedback` (the reformulation path) is added to every
/// expert prompt. Experts whose reply stays unparseable are dropped with a
/// warning; the stage fails only if every expert is dropped.
pub fn construct_formulation_candidates(
    ctx: &StageContext<'_>,
    grounding: &Grounding<'_>,
    experts: &[ExpertSpec],
    feedback: Option<&str>,
    parallel: bool,
    sink: &mut dyn EventSink,
) -> Result<Construction, StageError> {
    if experts.is_empty() {
        return Err(StageError::Precondition(
            "no formulation experts configured".into(),
        ));
    }
    let run = |expert: &ExpertSpec| {
        let mut events = Vec::new();
        let result = ask_expert(ctx, grounding, expert, feedback, &mut events);
        (result, events)
    };
    let results: Vec<_> = if parallel && experts.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = experts
                .iter()
                .map(|e| scope.spawn(move || run(e)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("expert thread panicked"))
                .collect()
        })
    } else {
        experts.iter().map(run).collect()
    };

    let mut candidates = Vec::new();
    let mut dropped = Vec::new();
    for (expert, (result, events)) in experts.iter().zip(results) {
        for e in events {
            sink.emit(e);
        }
        match result {
            Ok(formulation) => candidates.push(Candidate {
                expert: expert.tag.clone(),
                formulation,
            }),
            Err(StageError::Unparseable { error, .. }) => {
                sink.emit(Event::Warning {
                    stage: Some(Stage::Formulation),
                    message: format!("expert `{}` dropped: {error}", expert.tag),
                });
                dropped.push(expert.tag.clone());
            }
            Err(other) => return Err(other),
        }
    }
    if candidates.is_empty() {
        return Err(StageError::Agent(format!(
            "every formulation expert was dropped ({})",
            dropped.join(", ")
        )));
    }
    Ok(Construction {
        candidates: CandidateSet { candidates },
        dropped,
    })
}

/// The selector's pick: a zero-based index and whether it fell back to the
/// first candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    pub fallback: bool,
    pub called: bool,
}

fn first_number(text: &str) -> Option<usize> {
    let line = text.lines().find(|l| !l.trim().is_empty())?;
    let digits: String = line
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.parse().ok()
}

/// One call presenting every candidate. A singleton set skips the call. An
/// unusable or out-of-range reply falls back to candidate 1 with a warning.
pub fn select_formulation(
    ctx: &StageContext<'_>,
    grounding: &Grounding<'_>,
    candidates: &CandidateSet,
    sink: &mut dyn EventSink,
) -> Result<Selection, StageError> {
    match candidates.len() {
        0 => return Err(StageError::Precondition("candidate set is empty".into())),
        1 => {
            return Ok(Selection {
                index: 0,
                fallback: false,
                called: false,
            })
        }
        _ => {}
    }
    let listing = candidates
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            format!(
                "Candidate {} ({}):\n{}",
                i + 1,
                c.expert,
                c.formulation.render()
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let count = candidates.len().to_string();
    let prompt = ctx.render(
        "formulation_select",
        &[
            ("grounding", &grounding.render()),
            ("candidates", &listing),
            ("count", &count),
        ],
    )?;
    let request = ctx.request("formulation.select", vec![Message::user(prompt)]);
    let reply = crate::backend::complete(ctx.backend, &request, sink).map_err(|source| {
        StageError::Backend {
            purpose: "formulation.select".into(),
            source,
        }
    })?;
    match first_number(&reply.text) {
        Some(n) if (1..=candidates.len()).contains(&n) => Ok(Selection {
            index: n - 1,
            fallback: false,
            called: true,
        }),
        _ => {
            sink.emit(Event::Warning {
                stage: Some(Stage::Formulation),
                message: format!(
                    "selector reply {:?} is not a candidate number in 1..={}; using candidate 1",
                    reply.text.lines().next().unwrap_or(""),
                    candidates.len()
                ),
            });
            Ok(Selection {
                index: 0,
                fallback: true,
                called: true,
            })
        }
    }
}

pub fn validate_formulation(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    grounding: &Grounding<'_>,
    formulation: &MathFormulation,
    sink: &mut dyn EventSink,
) -> Result<StageVerdict, StageError> {
    formulation.validate()?;
    run_gate(
        &ValidationGate::new(Stage::Formulation, *ctx),
        &GateArtifact::Formulation {
            problem,
            specification: grounding.specification(),
            formulation,
        },
        sink,
    )
}

/// Expression-level repair that keeps the variable design.
pub fn revise_formulation(
    ctx: &StageContext<'_>,
    grounding: &Grounding<'_>,
    formulation: &MathFormulation,
    feedback: &str,
    sink: &mut dyn EventSink,
) -> Result<MathFormulation, StageError> {
    if feedback.trim().is_empty() {
        return Err(StageError::Precondition(
            "formulation revision needs non-empty feedback".into(),
        ));
    }
    let current = serde_json::to_string_pretty(formulation).expect("formulation serializes");
    let prompt = ctx.render(
        "formulation_revise",
        &[
            ("grounding", &grounding.render()),
            ("formulation", &current),
            ("feedback", feedback),
            ("format", ctx.prompts.raw("formulation_format")?),
        ],
    )?;
    ask_json(
        ctx,
        sink,
        "formulation.revise",
        vec![Message::user(prompt)],
        check_formulation,
    )
}

fn explore(
    ctx: &StageContext<'_>,
    grounding: &Grounding<'_>,
    experts: &[ExpertSpec],
    options: FormulationOptions,
    round: u32,
    feedback: Option<&str>,
    transcript: &mut StageTranscript,
) -> Result<MathFormulation, StageError> {
    let built = construct_formulation_candidates(
        ctx,
        grounding,
        experts,
        feedback,
        options.parallel_experts,
        transcript,
    )?;
    transcript.counters.expert_calls += experts.len() as u32;
    transcript.record(Event::FormulationConstruct {
        round,
        candidates: built.candidates.clone(),
        dropped: built.dropped,
    });
    let pick = select_formulation(ctx, grounding, &built.candidates, transcript)?;
    if pick.called {
        transcript.counters.selector_calls += 1;
    }
    transcript.record(Event::FormulationSelect {
        round,
        index: pick.index + 1,
        fallback: pick.fallback,
    });
    Ok(built.candidates.candidates[pick.index].formulation.clone())
}

pub fn run_formulation_stage(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    grounding: &Grounding<'_>,
    options: FormulationOptions,
    transcript: &mut StageTranscript,
) -> Result<MathFormulation, StageError> {
    let mut slot = None;
    formulation_stage_into(ctx, problem, grounding, options, &mut slot, transcript)?;
    Ok(slot.expect("stage completed"))
}

pub(crate) fn formulation_stage_into(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    grounding: &Grounding<'_>,
    options: FormulationOptions,
    slot: &mut Option<MathFormulation>,
    transcript: &mut StageTranscript,
) -> Result<(), StageError> {
    let generalist = [ctx.prompts.generalist().clone()];
    let experts: &[ExpertSpec] = if options.multi_expert {
        ctx.prompts.experts()
    } else {
        &generalist
    };
    let mut round = 1;
    *slot = Some(explore(
        ctx, grounding, experts, options, round, None, transcript,
    )?);
    if !options.validation {
        return Ok(());
    }
    for iteration in 1..=ctx.budgets.formulation_rounds {
        let current = slot.as_ref().expect("set above");
        let verdict = validate_formulation(ctx, problem, grounding, current, transcript)?;
        transcript.counters.formulation_iterations += 1;
        if iteration == 1 {
            transcript.counters.formulation_pass_at_1 = verdict.is_accept();
        }
        transcript.record(Event::FormulationValidate {
            iteration,
            verdict: verdict.clone(),
        });
        let feedback = verdict.feedback().render();
        match verdict.result() {
            Decision::Accept => break,
            Decision::PartialRevise => {
                let revised = revise_formulation(ctx, grounding, current, &feedback, transcript)?;
                transcript.counters.formulation_partial_revisions += 1;
                transcript.record(Event::FormulationRevise {
                    origin: RevisionOrigin::FormulationValidator,
                    formulation: revised.clone(),
                });
                *slot = Some(revised);
            }
            Decision::Reformulate => {
                transcript.counters.reformulations += 1;
                transcript.record(Event::FormulationReformulate { iteration });
                round += 1;
                *slot = Some(explore(
                    ctx,
                    grounding,
                    experts,
                    options,
                    round,
                    Some(&feedback),
                    transcript,
                )?);
            }
            other => unreachable!("formulation verdict cannot be {other:?}"),
        }
    }
    Ok(())
}
