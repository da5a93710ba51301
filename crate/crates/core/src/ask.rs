//! Shared plumbing for stage operations: the per-run context, the stage error
//! type, and the ask-parse-retry loop around a backend call.

use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::backend::{
    complete, BackendError, ChatBackend, ChatRequest, GenerationSettings, Message,
};
use crate::budget::PipelineBudgets;
use crate::executor::ExecutorError;
use crate::model::InvariantError;
use crate::prompts::{PromptError, PromptPack};
use crate::transcript::{Event, EventSink};
use crate::verdict::{parse_verdict, Stage, StageVerdict};

/// Collaborators shared by every operation of one run.
#[derive(Clone, Copy)]
pub struct StageContext<'a> {
    pub backend: &'a dyn ChatBackend,
    pub prompts: &'a PromptPack,
    pub budgets: &'a PipelineBudgets,
    pub generation: &'a GenerationSettings,
}

impl<'a> StageContext<'a> {
    pub fn request(&self, purpose: &str, messages: Vec<Message>) -> ChatRequest {
        ChatRequest::new(purpose, messages).with_params(self.generation.for_purpose(purpose))
    }

    pub fn render(&self, template: &str, vars: &[(&str, &str)]) -> Result<String, StageError> {
        Ok(self.prompts.render(template, vars)?)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageError {
    #[error("backend call `{purpose}` failed: {source}")]
    Backend {
        purpose: String,
        #[source]
        source: BackendError,
    },
    #[error("reply to `{purpose}` unusable after {attempts} attempt(s): {error}")]
    Unparseable {
        purpose: String,
        attempts: u32,
        error: String,
        /// Last raw reply text.
        raw: String,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("gate for stage {gate} was given a {artifact} artifact")]
    StageMismatch { gate: Stage, artifact: Stage },
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error("{0}")]
    Agent(String),
}

/// Errors from a standalone validation gate.
pub type GateError = StageError;

/// Sends `messages` and parses the reply. A reply that fails `parse` is
/// answered with the rendered `reminder` template (given the parse error as
/// `{{error}}`) and asked again, up to the configured number of retries.
pub fn ask<T>(
    ctx: &StageContext<'_>,
    sink: &mut dyn EventSink,
    purpose: &str,
    mut messages: Vec<Message>,
    reminder: (&str, &[(&str, &str)]),
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, StageError> {
    let attempts = ctx.budgets.parse_retries + 1;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let request = ctx.request(purpose, messages.clone());
        let reply =
            complete(ctx.backend, &request, sink).map_err(|source| StageError::Backend {
                purpose: purpose.to_string(),
                source,
            })?;
        match parse(&reply.text) {
            Ok(value) => return Ok(value),
            Err(error) if attempt < attempts => {
                sink.emit(Event::ParseRetry {
                    purpose: purpose.to_string(),
                    error: error.clone(),
                });
                let mut vars = vec![("error", error.as_str())];
                vars.extend_from_slice(reminder.1);
                let text = ctx.render(reminder.0, &vars)?;
                messages.push(Message::assistant(reply.text));
                messages.push(Message::user(text));
            }
            Err(error) => {
                return Err(StageError::Unparseable {
                    purpose: purpose.to_string(),
                    attempts,
                    error,
                    raw: reply.text,
                })
            }
        }
    }
}

/// [`ask`] for a JSON reply deserialized into `T` and checked by `check`.
pub(crate) fn ask_json<T: DeserializeOwned>(
    ctx: &StageContext<'_>,
    sink: &mut dyn EventSink,
    purpose: &str,
    messages: Vec<Message>,
    check: impl Fn(&T) -> Result<(), String>,
) -> Result<T, StageError> {
    ask(
        ctx,
        sink,
        purpose,
        messages,
        ("reminder_json", &[]),
        |text| {
            let value: T = extract_json(text)?;
            check(&value)?;
            Ok(value)
        },
    )
}

/// [`ask`] for a validator verdict.
pub(crate) fn ask_verdict(
    ctx: &StageContext<'_>,
    sink: &mut dyn EventSink,
    stage: Stage,
    messages: Vec<Message>,
) -> Result<StageVerdict, StageError> {
    let tokens = stage
        .decisions()
        .iter()
        .map(|d| d.token())
        .collect::<Vec<_>>()
        .join(", ");
    let purpose = format!("{stage}.validate");
    ask(
        ctx,
        sink,
        &purpose,
        messages,
        ("reminder_verdict", &[("tokens", tokens.as_str())]),
        |text| parse_verdict(stage, text).map_err(|e| e.to_string()),
    )
}

/// Finds the first JSON object in `text` that deserializes into `T`.
/// Surrounding prose and markdown fences are ignored.
pub fn extract_json<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let mut first_error = None;
    let mut from = 0;
    while let Some(rel) = text[from..].find('{') {
        let start = from + rel;
        let mut stream =
            serde_json::Deserializer::from_str(&text[start..]).into_iter::<serde_json::Value>();
        match stream.next() {
            Some(Ok(value)) => {
                match serde_json::from_value::<T>(value) {
                    Ok(v) => return Ok(v),
                    Err(e) => {
                        first_error.get_or_insert_with(|| e.to_string());
                    }
                }
                // skip the whole object so nested objects are not tried alone
                from = start + stream.byte_offset().max(1);
            }
            _ => from = start + 1,
        }
    }
    Err(first_error.unwrap_or_else(|| "no JSON object found in reply".to_string()))
}
