//! Deterministic replay backend.
//!
//! Script files are JSON Lines. Each record queues one reply:
//!
//! ```text
//! {"purpose": "semantic.extract", "reply": "{\"facts\": [...]}", "prompt_tokens": 12}
//! {"purpose": "formulation.expert.*", "reply": "...", "repeat": true}
//! {"purpose": "*", "reply": "ACCEPT"}
//! ```
//!
//! A key matches a purpose exactly, by prefix when it ends in `.*`, or always
//! when it is `*`. An optional `{"mode": "strict"}` line switches the mode.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptMode {
    /// Each request must match the key at the head of the queue.
    Strict,
    /// Each request takes the first queued entry whose key matches, preferring
    /// exact keys over prefixes and prefixes over `*`.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub purpose: String,
    pub reply: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    /// Entry stays queued after use (lenient mode only).
    #[serde(default)]
    pub repeat: bool,
}

impl ScriptEntry {
    pub fn new(purpose: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            purpose: purpose.into(),
            reply: reply.into(),
            prompt_tokens: 0,
            completion_tokens: 0,
            repeat: false,
        }
    }

    pub fn with_tokens(mut self, prompt: u64, completion: u64) -> Self {
        self.prompt_tokens = prompt;
        self.completion_tokens = completion;
        self
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }

    /// 0 = no match, 1 = wildcard, 2 = prefix, 3 = exact.
    fn match_rank(&self, purpose: &str) -> u8 {
        if self.purpose == purpose {
            3
        } else if let Some(prefix) = self.purpose.strip_suffix('*') {
            if prefix.is_empty() {
                1
            } else if purpose.starts_with(prefix) {
                2
            } else {
                0
            }
        } else {
            0
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptLine {
    Mode { mode: ScriptMode },
    Entry(ScriptEntry),
}

pub struct ScriptedBackend {
    id: String,
    mode: ScriptMode,
    queue: Mutex<VecDeque<ScriptEntry>>,
}

impl ScriptedBackend {
    pub fn new(mode: ScriptMode) -> Self {
        Self {
            id: "scripted".to_string(),
            mode,
            queue: Mutex::new(VecDeque::new()),
        }
    }

    pub fn with_entries(mode: ScriptMode, entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let b = Self::new(mode);
        for e in entries {
            b.push(e);
        }
        b
    }

    /// Strict backend replaying `(purpose, reply)` pairs in order.
    pub fn strict<P, R>(pairs: impl IntoIterator<Item = (P, R)>) -> Self
    where
        P: Into<String>,
        R: Into<String>,
    {
        Self::with_entries(
            ScriptMode::Strict,
            pairs.into_iter().map(|(p, r)| ScriptEntry::new(p, r)),
        )
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn mode(&self) -> ScriptMode {
        self.mode
    }

    pub fn push(&self, entry: ScriptEntry) {
        self.lock().push_back(entry);
    }

    pub fn remaining(&self) -> usize {
        self.lock().iter().filter(|e| !e.repeat).count()
    }

    pub fn parse_jsonl(text: &str, default_mode: ScriptMode) -> Result<Self, BackendError> {
        let mut mode = default_mode;
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() || raw.trim_start().starts_with("//") {
                continue;
            }
            let line: ScriptLine = serde_json::from_str(raw)
                .map_err(|e| BackendError::Config(format!("script line {}: {e}", i + 1)))?;
            match line {
                ScriptLine::Mode { mode: m } => mode = m,
                ScriptLine::Entry(e) => entries.push(e),
            }
        }
        if mode == ScriptMode::Strict && entries.iter().any(|e| e.repeat) {
            return Err(BackendError::Config(
                "repeating script entries require lenient mode".into(),
            ));
        }
        Ok(Self::with_entries(mode, entries))
    }

    pub fn load(path: &Path, default_mode: ScriptMode) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_jsonl(&text, default_mode)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, VecDeque<ScriptEntry>> {
        self.queue.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn next_entry(&self, purpose: &str) -> Result<ScriptEntry, BackendError> {
        let mut queue = self.lock();
        match self.mode {
            ScriptMode::Strict => {
                let front = queue.front().ok_or_else(|| BackendError::ScriptExhausted {
                    purpose: purpose.to_string(),
                })?;
                if front.match_rank(purpose) == 0 {
                    return Err(BackendError::ScriptMismatch {
                        expected: front.purpose.clone(),
                        actual: purpose.to_string(),
                    });
                }
                Ok(queue.pop_front().expect("front checked"))
            }
            ScriptMode::Lenient => {
                let mut best: Option<(usize, u8)> = None;
                for (i, e) in queue.iter().enumerate() {
                    let rank = e.match_rank(purpose);
                    if rank > best.map_or(0, |(_, r)| r) {
                        best = Some((i, rank));
                        if rank == 3 {
                            break;
                        }
                    }
                }
                let (i, _) = best.ok_or_else(|| BackendError::ScriptExhausted {
                    purpose: purpose.to_string(),
                })?;
                if queue[i].repeat {
                    Ok(queue[i].clone())
                } else {
                    Ok(queue.remove(i).expect("index in range"))
                }
            }
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let entry = self.next_entry(&request.purpose)?;
        Ok(ChatReply {
            text: entry.reply,
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
            backend_id: self.id.clone(),
        })
    }
}
