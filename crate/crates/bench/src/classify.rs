//! Attributes a failed instance to one error class by asking the backend.

use std::fmt;

use serde::{Deserialize, Serialize};
use trival_core::ask::ask;
use trival_core::backend::Message;
use trival_core::transcript::EventSink;
use trival_core::{Event, ProblemInstance, StageContext, TokenUsage};

pub const PURPOSE: &str = "bench.classify";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    VariableDesign,
    ConstraintExpression,
    CodeGeneration,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 3] = [
        ErrorClass::VariableDesign,
        ErrorClass::ConstraintExpression,
        ErrorClass::CodeGeneration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::VariableDesign => "variable_design",
            ErrorClass::ConstraintExpression => "constraint_expression",
            ErrorClass::CodeGeneration => "code_generation",
        }
    }

    pub fn parse(s: &str) -> Option<ErrorClass> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        ErrorClass::ALL.into_iter().find(|c| c.as_str() == norm)
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedError {
    pub class: ErrorClass,
    /// The classifier never gave a usable answer and the class is a fallback.
    #[serde(default)]
    pub low_confidence: bool,
    #[serde(default)]
    pub justification: String,
    #[serde(default)]
    pub tokens: TokenUsage,
}

/// Parses `<class>[: justification]` on the first line, with an optional
/// justification on the lines after it.
pub fn parse_classification(text: &str) -> Result<(ErrorClass, String), String> {
    let text = text.trim();
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let (head, inline) = first.split_once(':').unwrap_or((first, ""));
    let head = head.trim().trim_matches(|c: char| c == '*' || c == '`');
    let class = ErrorClass::parse(head)
        .ok_or_else(|| format!("first line `{}` is not a category name", first.trim()))?;
    let justification = [inline.trim(), rest.trim()]
        .iter()
        .filter(|s| !s.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ");
    Ok((class, justification))
}

/// Classifies a failed run. Backend failures and unusable replies fall
/// back to [`ErrorClass::CodeGeneration`] marked low confidence.
pub fn classify_failure(
    ctx: &StageContext<'_>,
    problem: &ProblemInstance,
    artifacts: &str,
) -> ClassifiedError {
    let reference = problem.reference_objective.to_string();
    let mut events: Vec<Event> = Vec::new();
    let prompt = ctx.render(
        "classify_error",
        &[
            ("problem", problem.description.as_str()),
            ("reference", reference.as_str()),
            ("artifacts", artifacts),
        ],
    );
    let tokens_list = ErrorClass::ALL.map(ErrorClass::as_str).join(", ");
    let result = prompt.and_then(|prompt| {
        ask(
            ctx,
            &mut events as &mut dyn EventSink,
            PURPOSE,
            vec![Message::user(prompt)],
            ("reminder_verdict", &[("tokens", tokens_list.as_str())]),
            parse_classification,
        )
    });
    let mut tokens = TokenUsage::default();
    for e in &events {
        if let Event::LlmCall {
            prompt_tokens,
            completion_tokens,
            ..
        } = e
        {
            tokens.add(TokenUsage {
                prompt: *prompt_tokens,
                completion: *completion_tokens,
            });
        }
    }
    match result {
        Ok((class, justification)) => ClassifiedError {
            class,
            low_confidence: false,
            justification,
            tokens,
        },
        Err(e) => {
            tracing::warn!(instance = %problem.id, "classification failed: {e}");
            ClassifiedError {
                class: ErrorClass::CodeGeneration,
                low_confidence: true,
                justification: format!("classifier unavailable: {e}"),
                tokens,
            }
        }
    }
}
