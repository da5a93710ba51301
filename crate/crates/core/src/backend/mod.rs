//! Chat-completion backends.
//!
//! Every model interaction in the pipeline goes through [`ChatBackend`]: a
//! single text-in/text-out call. Tool use by the code agent is encoded in the
//! reply text and parsed by the code stage, so any provider that can return a
//! string works.

mod capture;
mod live;
mod scripted;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transcript::{Event, EventSink};

pub use capture::{CaptureBackend, CapturedRequest};
pub use live::{LiveBackend, LiveConfig, ENV_API_BASE, ENV_API_KEY, ENV_MODEL};
pub use scripted::{ScriptEntry, ScriptMode, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f32,
    pub max_tokens: Option<u32>,
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: None,
            seed: None,
        }
    }
}

/// Generation parameters per purpose tag. The longest configured prefix of a
/// purpose wins; purposes without a match use `default`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub default: GenerationParams,
    pub purposes: BTreeMap<String, GenerationParams>,
}

impl GenerationSettings {
    pub fn for_purpose(&self, purpose: &str) -> GenerationParams {
        self.purposes
            .iter()
            .filter(|(prefix, _)| purpose.starts_with(prefix.as_str()))
            .max_by_key(|(prefix, _)| prefix.len())
            .map(|(_, p)| p.clone())
            .unwrap_or_else(|| self.default.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub params: GenerationParams,
    /// `stage.operation`, e.g. `formulation.select`; drives accounting and
    /// scripted replay.
    pub purpose: String,
}

impl ChatRequest {
    pub fn new(purpose: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            messages,
            params: GenerationParams::default(),
            purpose: purpose.into(),
        }
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.purpose.trim().is_empty() {
            return Err(BackendError::InvalidRequest("purpose tag is empty".into()));
        }
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(BackendError::InvalidRequest(format!(
                "request `{}` has no user message",
                self.purpose
            )));
        }
        Ok(())
    }

    /// All message contents joined, for request-capture assertions.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("scripted backend exhausted: no reply queued for `{purpose}`")]
    ScriptExhausted { purpose: String },
    #[error("scripted backend expected purpose `{expected}` but got `{actual}`")]
    ScriptMismatch { expected: String, actual: String },
    #[error("backend configuration: {0}")]
    Config(String),
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        (**self).chat(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        (**self).chat(request)
    }
}

/// Sends `request` and records an `llm.call` event with its token usage.
pub fn complete(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    sink: &mut dyn EventSink,
) -> Result<ChatReply, BackendError> {
    request.validate()?;
    let reply = backend.chat(request)?;
    sink.emit(Event::LlmCall {
        purpose: request.purpose.clone(),
        prompt_tokens: reply.prompt_tokens,
        completion_tokens: reply.completion_tokens,
        backend_id: reply.backend_id.clone(),
    });
    Ok(reply)
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// Backend whose replies come from a closure. Handy for adversarial tests
/// where the reply depends on the request.
pub struct FnBackend {
    id: String,
    reply: Box<ReplyFn>,
}

impl FnBackend {
    pub fn new<F>(id: impl Into<String>, reply: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self {
            id: id.into(),
            reply: Box::new(reply),
        }
    }
}

impl ChatBackend for FnBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        Ok(ChatReply {
            text: (self.reply)(request)?,
            prompt_tokens: 0,
            completion_tokens: 0,
            backend_id: self.id.clone(),
        })
    }
}
