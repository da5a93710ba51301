//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest};

pub const ENV_API_BASE: &str = "TRIVAL_API_BASE";
pub const ENV_MODEL: &str = "TRIVAL_MODEL";
pub const ENV_API_KEY: &str = "TRIVAL_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub api_base: String,
    pub model: String,
    /// Name of the environment variable holding the key. The key itself is
    /// never stored in config files.
    pub api_key_env: String,
    pub request_timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            api_base: String::new(),
            model: String::new(),
            api_key_env: ENV_API_KEY.to_string(),
            request_timeout_secs: 300,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

impl LiveConfig {
    /// Fills empty `api_base` and `model` from the environment.
    pub fn from_env(mut self) -> Self {
        if self.api_base.is_empty() {
            self.api_base = std::env::var(ENV_API_BASE).unwrap_or_default();
        }
        if self.model.is_empty() {
            self.model = std::env::var(ENV_MODEL).unwrap_or_default();
        }
        self
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    id: String,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
        if config.api_base.trim().is_empty() {
            return Err(BackendError::Config(format!(
                "no API base URL (set `api_base` or {ENV_API_BASE})"
            )));
        }
        if config.model.trim().is_empty() {
            return Err(BackendError::Config(format!(
                "no model name (set `model` or {ENV_MODEL})"
            )));
        }
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.request_timeout_secs.max(1)))
            .build();
        let id = format!("live:{}", config.model);
        Ok(Self {
            config,
            api_key,
            agent,
            id,
        })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.api_base.trim_end_matches('/')
        )
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.params.temperature,
        });
        if let Some(n) = request.params.max_tokens {
            body["max_tokens"] = json!(n);
        }
        if let Some(seed) = request.params.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn send_once(&self, body: &Value) -> Result<Value, Attempt> {
        let mut call = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        match call.send_json(body.clone()) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| Attempt::Fatal(BackendError::MalformedResponse(e.to_string()))),
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let err = BackendError::Http { status, body };
                if status == 429 || status >= 500 {
                    Err(Attempt::Retry(err))
                } else {
                    Err(Attempt::Fatal(err))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(Attempt::Retry(BackendError::Transport {
                attempts: 1,
                message: t.to_string(),
            })),
        }
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

fn parse_completion(value: &Value, backend_id: &str) -> Result<ChatReply, BackendError> {
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| {
            BackendError::MalformedResponse("missing choices[0].message.content".into())
        })?;
    let usage = |key: &str| {
        value
            .pointer(&format!("/usage/{key}"))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok(ChatReply {
        text: text.to_string(),
        prompt_tokens: usage("prompt_tokens"),
        completion_tokens: usage("completion_tokens"),
        backend_id: backend_id.to_string(),
    })
}

impl ChatBackend for LiveBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        request.validate()?;
        let body = self.body(request);
        let attempts = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            match self.send_once(&body) {
                Ok(value) => return parse_completion(&value, &self.id),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    tracing::warn!(purpose = %request.purpose, attempt, error = %e, "backend call failed");
                    last = Some(e);
                    if attempt < attempts {
                        let wait = self
                            .config
                            .backoff_ms
                            .saturating_mul(1 << (attempt - 1).min(10));
                        std::thread::sleep(Duration::from_millis(wait));
                    }
                }
            }
        }
        Err(match last {
            Some(BackendError::Transport { message, .. }) => {
                BackendError::Transport { attempts, message }
            }
            Some(e) => e,
            None => BackendError::Transport {
                attempts,
                message: "no attempt made".into(),
            },
        })
    }
}
