//! Semantic stage: extract facts and ambiguities, resolve the ambiguities,
//! then validate and revise the specification.

use serde::Deserialize;

use crate::ask::{ask_json, StageContext, StageError};
use crate::backend::Message;
use crate::gate::{run_gate, GateArtifact, ValidationGate};
use crate::model::{Ambiguity, Fact, ProblemInstance, Resolution, SemanticSpecification};
use crate::transcript::{Event, EventSink, StageTranscript};
use crate::verdict::{Feedback, Stage, StageVerdict};

#[derive(Deserialize)]
struct Extraction {
    facts: Vec<Fact>,
    #[serde(default)]
    ambiguities: Vec<Ambiguity>,
}

#[derive(Deserialize)]
struct Resolutions {
    resolutions: Vec<Resolution>,
}

fn numbered<T>(items: &[T], show: impl Fn(&T) -> String) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, x)| format!("{i}. {}", show(x)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Two calls: extraction, then resolution. The resolution call is skipped
/// when no ambiguity was found.
pub fn construct_semantic_specification(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    sink: &mut dyn EventSink,
) -> Result<SemanticSpecification, StageError> {
    problem.validate()?;
    let prompt = ctx.render("semantic_extract", &[("problem", &problem.description)])?;
    let extraction: Extraction = ask_json(
        ctx,
        sink,
        "semantic.extract",
        vec![Message::user(prompt)],
        |e: &Extraction| {
            if e.facts.is_empty() {
                Err("the facts list is empty".into())
            } else {
                Ok(())
            }
        },
    )?;
    let mut spec = SemanticSpecification {
        facts: extraction.facts,
        ambiguities: extraction.ambiguities,
        resolutions: Vec::new(),
    };
    if spec.ambiguities.is_empty() {
        return Ok(spec);
    }

    let facts = numbered(&spec.facts, |f| format!("[{}] {}", f.kind, f.text));
    let ambiguities = numbered(&spec.ambiguities, |a| {
        format!("{} (impact: {})", a.text, a.modeling_impact)
    });
    let prompt = ctx.render(
        "semantic_resolve",
        &[
            ("problem", &problem.description),
            ("facts", &facts),
            ("ambiguities", &ambiguities),
        ],
    )?;
    let partial = spec.clone();
    let reply: Resolutions = ask_json(
        ctx,
        sink,
        "semantic.resolve",
        vec![Message::user(prompt)],
        |r: &Resolutions| {
            let mut candidate = partial.clone();
            candidate.resolutions = r.resolutions.clone();
            candidate.validate().map_err(|e| e.to_string())
        },
    )?;
    spec.resolutions = reply.resolutions;
    Ok(spec)
}

pub fn validate_semantic_specification(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    specification: &SemanticSpecification,
    sink: &mut dyn EventSink,
) -> Result<StageVerdict, StageError> {
    specification.validate()?;
    run_gate(
        &ValidationGate::new(Stage::Semantic, *ctx),
        &GateArtifact::Semantic {
            problem,
            specification,
        },
        sink,
    )
}

/// Returns a new specification; `specification` itself is left untouched.
pub fn revise_semantic_specification(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    specification: &SemanticSpecification,
    feedback: &Feedback,
    sink: &mut dyn EventSink,
) -> Result<SemanticSpecification, StageError> {
    if feedback.is_empty() {
        return Err(StageError::Precondition(
            "semantic revision needs non-empty feedback".into(),
        ));
    }
    let current = serde_json::to_string_pretty(specification).expect("specification serializes");
    let prompt = ctx.render(
        "semantic_revise",
        &[
            ("problem", &problem.description),
            ("specification", &current),
            ("feedback", &feedback.render()),
        ],
    )?;
    ask_json(
        ctx,
        sink,
        "semantic.revise",
        vec![Message::user(prompt)],
        |s: &SemanticSpecification| s.validate().map_err(|e| e.to_string()),
    )
}

/// Construct once, then validate and revise up to the semantic round budget.
/// When the budget runs out the current specification is returned.
pub fn run_semantic_stage(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    validation: bool,
    transcript: &mut StageTranscript,
) -> Result<SemanticSpecification, StageError> {
    let mut slot = None;
    semantic_stage_into(ctx, problem, validation, &mut slot, transcript)?;
    Ok(slot.expect("stage completed"))
}

pub(crate) fn semantic_stage_into(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    validation: bool,
    slot: &mut Option<SemanticSpecification>,
    transcript: &mut StageTranscript,
) -> Result<(), StageError> {
    let spec = construct_semantic_specification(ctx, problem, transcript)?;
    transcript.record(Event::SemanticConstruct {
        specification: spec.clone(),
    });
    *slot = Some(spec);
    if !validation {
        return Ok(());
    }
    for iteration in 1..=ctx.budgets.semantic_rounds {
        let current = slot.as_ref().expect("set above");
        let verdict = validate_semantic_specification(ctx, problem, current, transcript)?;
        transcript.counters.semantic_iterations += 1;
        transcript.record(Event::SemanticValidate {
            iteration,
            verdict: verdict.clone(),
        });
        if verdict.is_accept() {
            break;
        }
        let revised =
            revise_semantic_specification(ctx, problem, current, verdict.feedback(), transcript)?;
        transcript.counters.semantic_revisions += 1;
        transcript.record(Event::SemanticRevise {
            iteration,
            specification: revised.clone(),
        });
        *slot = Some(revised);
    }
    Ok(())
}
