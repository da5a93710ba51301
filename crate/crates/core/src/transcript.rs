//! Per-run event log, counters and token accounting.
//!
//! A transcript serializes to JSON Lines: one `header` record, one `event`
//! record per logged event, and a closing `summary` record. See
//! `docs/formats.md` for the field-level schema.

use std::collections::BTreeMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::PipelineBudgets;
use crate::code::ToolAction;
use crate::model::{
    CandidateSet, ExecutionReport, GeneratedProgram, MathFormulation, SemanticSpecification,
};
use crate::verdict::{Stage, StageVerdict};

/// Where a formulation revision was requested from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevisionOrigin {
    FormulationValidator,
    CodeValidator,
}

/// Which agent loop issued a tool action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentPhase {
    Generate,
    SelfCorrect,
    Revise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum Event {
    #[serde(rename = "semantic.construct")]
    SemanticConstruct {
        specification: SemanticSpecification,
    },
    #[serde(rename = "semantic.validate")]
    SemanticValidate {
        iteration: u32,
        verdict: StageVerdict,
    },
    #[serde(rename = "semantic.revise")]
    SemanticRevise {
        iteration: u32,
        specification: SemanticSpecification,
    },
    #[serde(rename = "formulation.construct")]
    FormulationConstruct {
        round: u32,
        candidates: CandidateSet,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        dropped: Vec<String>,
    },
    #[serde(rename = "formulation.select")]
    FormulationSelect {
        round: u32,
        /// One-based index into the candidate set.
        index: usize,
        fallback: bool,
    },
    #[serde(rename = "formulation.validate")]
    FormulationValidate {
        iteration: u32,
        verdict: StageVerdict,
    },
    #[serde(rename = "formulation.revise")]
    FormulationRevise {
        origin: RevisionOrigin,
        formulation: MathFormulation,
    },
    #[serde(rename = "formulation.reformulate")]
    FormulationReformulate { iteration: u32 },
    #[serde(rename = "code.generate")]
    CodeGenerate {
        program: GeneratedProgram,
        lineage: u32,
    },
    #[serde(rename = "code.tool")]
    CodeTool {
        phase: AgentPhase,
        action: ToolAction,
        accepted: bool,
        message: String,
    },
    #[serde(rename = "code.execute")]
    CodeExecute {
        iteration: u32,
        round: u32,
        revision: u32,
        report: ExecutionReport,
    },
    #[serde(rename = "code.self_correct")]
    CodeSelfCorrect { program: GeneratedProgram },
    #[serde(rename = "code.validate")]
    CodeValidate {
        iteration: u32,
        verdict: StageVerdict,
    },
    #[serde(rename = "code.revise")]
    CodeRevise { program: GeneratedProgram },
    #[serde(rename = "code.final_execute")]
    CodeFinalExecute {
        revision: u32,
        report: ExecutionReport,
    },
    #[serde(rename = "llm.call")]
    LlmCall {
        purpose: String,
        prompt_tokens: u64,
        completion_tokens: u64,
        backend_id: String,
    },
    #[serde(rename = "parse.retry")]
    ParseRetry { purpose: String, error: String },
    #[serde(rename = "warning")]
    Warning {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stage: Option<Stage>,
        message: String,
    },
    #[serde(rename = "run.failed")]
    RunFailed { stage: Stage, error: String },
}

impl Event {
    /// Wire name, e.g. `formulation.validate`.
    pub fn name(&self) -> &'static str {
        match self {
            Event::SemanticConstruct { .. } => "semantic.construct",
            Event::SemanticValidate { .. } => "semantic.validate",
            Event::SemanticRevise { .. } => "semantic.revise",
            Event::FormulationConstruct { .. } => "formulation.construct",
            Event::FormulationSelect { .. } => "formulation.select",
            Event::FormulationValidate { .. } => "formulation.validate",
            Event::FormulationRevise { .. } => "formulation.revise",
            Event::FormulationReformulate { .. } => "formulation.reformulate",
            Event::CodeGenerate { .. } => "code.generate",
            Event::CodeTool { .. } => "code.tool",
            Event::CodeExecute { .. } => "code.execute",
            Event::CodeSelfCorrect { .. } => "code.self_correct",
            Event::CodeValidate { .. } => "code.validate",
            Event::CodeRevise { .. } => "code.revise",
            Event::CodeFinalExecute { .. } => "code.final_execute",
            Event::LlmCall { .. } => "llm.call",
            Event::ParseRetry { .. } => "parse.retry",
            Event::Warning { .. } => "warning",
            Event::RunFailed { .. } => "run.failed",
        }
    }

    /// Stage the event belongs to, if any. Backend calls are attributed by
    /// their purpose tag.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Event::LlmCall { purpose, .. } | Event::ParseRetry { purpose, .. } => {
                stage_of_purpose(purpose)
            }
            Event::Warning { stage, .. } => *stage,
            Event::RunFailed { stage, .. } => Some(*stage),
            other => other.name().split('.').next().and_then(|s| s.parse().ok()),
        }
    }

    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Event::SemanticValidate { .. }
                | Event::FormulationValidate { .. }
                | Event::CodeValidate { .. }
        )
    }
}

/// Stage named by the first segment of a purpose tag (`formulation.select`).
pub fn stage_of_purpose(purpose: &str) -> Option<Stage> {
    purpose.split('.').next().and_then(|s| s.parse().ok())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub seq: u64,
    pub elapsed_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Counters {
    /// Semantic validate calls.
    pub semantic_iterations: u32,
    /// Formulation validate calls.
    pub formulation_iterations: u32,
    /// Code validation rounds entered (each starts with an execution).
    pub code_iterations: u32,
    /// Program executions inside the code loop.
    pub execution_rounds: u32,
    /// First formulation verdict was accept.
    pub formulation_pass_at_1: bool,
    pub semantic_revisions: u32,
    pub formulation_partial_revisions: u32,
    pub reformulations: u32,
    pub expert_calls: u32,
    pub selector_calls: u32,
    pub code_generations: u32,
    pub self_corrections: u32,
    pub code_revisions: u32,
    /// Formulation revisions requested by the code validator.
    pub formulation_revisions_from_code: u32,
    /// Formulations handed to code generation in this run.
    pub formulation_lineage: u32,
    pub agent_steps: u32,
    pub backend_calls: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.prompt += other.prompt;
        self.completion += other.completion;
    }
}

/// Token sums partitioned by stage. Calls whose purpose names no stage land in
/// `other`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub semantic: TokenUsage,
    pub formulation: TokenUsage,
    pub code: TokenUsage,
    pub other: TokenUsage,
}

impl TokenTotals {
    pub fn stage(&self, stage: Stage) -> TokenUsage {
        match stage {
            Stage::Semantic => self.semantic,
            Stage::Formulation => self.formulation,
            Stage::Code => self.code,
        }
    }

    fn slot(&mut self, stage: Option<Stage>) -> &mut TokenUsage {
        match stage {
            Some(Stage::Semantic) => &mut self.semantic,
            Some(Stage::Formulation) => &mut self.formulation,
            Some(Stage::Code) => &mut self.code,
            None => &mut self.other,
        }
    }

    pub fn grand_total(&self) -> TokenUsage {
        let mut t = TokenUsage::default();
        for part in [self.semantic, self.formulation, self.code, self.other] {
            t.add(part);
        }
        t
    }

    pub fn add(&mut self, other: &TokenTotals) {
        self.semantic.add(other.semantic);
        self.formulation.add(other.formulation);
        self.code.add(other.code);
        self.other.add(other.other);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub run_id: String,
    pub instance_id: String,
    #[serde(default)]
    pub variant: String,
    /// Variable-type directive appended to the problem for this run, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<String>,
    pub started_at_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(TranscriptHeader),
    Event(TimedEvent),
    Summary {
        counters: Counters,
        tokens: TokenTotals,
    },
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("transcript has no header record")]
    MissingHeader,
    #[error("line {line}: unexpected {what} record")]
    Unexpected { line: usize, what: &'static str },
}

/// Event log and counters of one pipeline run.
#[derive(Debug, Clone)]
pub struct StageTranscript {
    pub header: TranscriptHeader,
    pub events: Vec<TimedEvent>,
    pub counters: Counters,
    clock: Instant,
}

impl PartialEq for StageTranscript {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header
            && self.events == other.events
            && self.counters == other.counters
    }
}

impl StageTranscript {
    pub fn new(run_id: impl Into<String>, instance_id: impl Into<String>) -> Self {
        let started_at_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Self {
            header: TranscriptHeader {
                run_id: run_id.into(),
                instance_id: instance_id.into(),
                variant: String::new(),
                branch: None,
                started_at_unix_ms,
            },
            events: Vec::new(),
            counters: Counters::default(),
            clock: Instant::now(),
        }
    }

    pub fn record(&mut self, event: Event) {
        if matches!(event, Event::LlmCall { .. }) {
            self.counters.backend_calls += 1;
        }
        let seq = self.events.len() as u64;
        let elapsed_ms = self.clock.elapsed().as_millis() as u64;
        self.events.push(TimedEvent {
            seq,
            elapsed_ms,
            event,
        });
    }

    /// Appends events captured elsewhere (e.g. on a worker thread), keeping
    /// their relative order and renumbering them.
    pub fn absorb(&mut self, events: Vec<Event>) {
        for e in events {
            self.record(e);
        }
    }

    pub fn events_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Event> + 'a {
        self.events
            .iter()
            .map(|t| &t.event)
            .filter(move |e| e.name() == name)
    }

    pub fn count(&self, name: &str) -> usize {
        self.events_named(name).count()
    }

    pub fn validation_events(&self) -> usize {
        self.events
            .iter()
            .filter(|t| t.event.is_validation())
            .count()
    }

    /// Backend calls whose purpose starts with `prefix`.
    pub fn calls_with_prefix(&self, prefix: &str) -> usize {
        self.events
            .iter()
            .filter(|t| matches!(&t.event, Event::LlmCall { purpose, .. } if purpose.starts_with(prefix)))
            .count()
    }

    /// Checks every counter against its budget.
    pub fn check_budgets(&self, budgets: &PipelineBudgets) -> Result<(), String> {
        let c = &self.counters;
        let checks = [
            (
                "semantic_iterations",
                c.semantic_iterations,
                budgets.semantic_rounds,
            ),
            (
                "formulation_iterations",
                c.formulation_iterations,
                budgets.formulation_rounds,
            ),
            ("code_iterations", c.code_iterations, budgets.code_rounds),
            (
                "execution_rounds",
                c.execution_rounds,
                budgets.code_rounds * budgets.self_correction_rounds,
            ),
        ];
        for (name, value, limit) in checks {
            if value > limit {
                return Err(format!("{name} = {value} exceeds budget {limit}"));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("transcript records serialize"));
            out.push('\n');
        };
        push(&Line::Header(self.header.clone()));
        for e in &self.events {
            push(&Line::Event(e.clone()));
        }
        push(&Line::Summary {
            counters: self.counters.clone(),
            tokens: token_totals(self),
        });
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut header = None;
        let mut events = Vec::new();
        let mut counters = Counters::default();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(raw).map_err(|source| TranscriptError::Json {
                line: i + 1,
                source,
            })?;
            match line {
                Line::Header(h) => {
                    if header.is_some() {
                        return Err(TranscriptError::Unexpected {
                            line: i + 1,
                            what: "header",
                        });
                    }
                    header = Some(h);
                }
                Line::Event(e) => events.push(e),
                Line::Summary { counters: c, .. } => counters = c,
            }
        }
        Ok(Self {
            header: header.ok_or(TranscriptError::MissingHeader)?,
            events,
            counters,
            clock: Instant::now(),
        })
    }

    /// Copy with all timing fields zeroed, for replay comparisons.
    pub fn without_timestamps(&self) -> Self {
        let mut t = self.clone();
        t.header.started_at_unix_ms = 0;
        for e in &mut t.events {
            e.elapsed_ms = 0;
            match &mut e.event {
                Event::CodeExecute { report, .. } | Event::CodeFinalExecute { report, .. } => {
                    report.wall_time = 0.0;
                }
                _ => {}
            }
        }
        t
    }
}

/// Destination for events: a run's transcript, or a detached buffer for
/// work done off the run's thread.
pub trait EventSink {
    fn emit(&mut self, event: Event);
}

impl EventSink for StageTranscript {
    fn emit(&mut self, event: Event) {
        self.record(event);
    }
}

impl EventSink for Vec<Event> {
    fn emit(&mut self, event: Event) {
        self.push(event);
    }
}

/// Sums recorded backend token usage by stage.
pub fn token_totals(transcript: &StageTranscript) -> TokenTotals {
    let mut totals = TokenTotals::default();
    for t in &transcript.events {
        if let Event::LlmCall {
            purpose,
            prompt_tokens,
            completion_tokens,
            ..
        } = &t.event
        {
            totals.slot(stage_of_purpose(purpose)).add(TokenUsage {
                prompt: *prompt_tokens,
                completion: *completion_tokens,
            });
        }
    }
    totals
}

/// Token sums keyed by full purpose tag.
pub fn tokens_by_purpose(transcript: &StageTranscript) -> BTreeMap<String, TokenUsage> {
    let mut map: BTreeMap<String, TokenUsage> = BTreeMap::new();
    for t in &transcript.events {
        if let Event::LlmCall {
            purpose,
            prompt_tokens,
            completion_tokens,
            ..
        } = &t.event
        {
            map.entry(purpose.clone()).or_default().add(TokenUsage {
                prompt: *prompt_tokens,
                completion: *completion_tokens,
            });
        }
    }
    map
}
