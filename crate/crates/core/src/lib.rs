//! Construct-validate-revise pipeline for turning natural-language
//! optimization problems into solver programs.
//!
//! A run passes through three stages. Each builds an artifact, asks a
//! validator for a verdict and revises until the verdict is accept or the
//! stage's round budget runs out:
//!
//! 1. [`semantic`]: facts, ambiguities and resolutions extracted from the text.
//! 2. [`formulation`]: candidate models from several expert perspectives, a
//!    selection, then validation with partial revision or reformulation.
//! 3. [`code`]: a tool-using agent writes the program, execution feedback
//!    drives self-correction, and the validator attributes defects to the
//!    code or back to the formulation.
//!
//! [`pipeline::Pipeline`] drives the stages; [`gate`] exposes the validators
//! on their own.

pub mod ask;
pub mod backend;
pub mod budget;
pub mod code;
pub mod executor;
pub mod formulation;
pub mod gate;
pub mod metric;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod semantic;
pub mod testkit;
pub mod transcript;
pub mod verdict;

pub use ask::{extract_json, GateError, StageContext, StageError};
pub use backend::{
    complete, CaptureBackend, ChatBackend, ChatReply, ChatRequest, FnBackend, ScriptEntry,
    ScriptMode, ScriptedBackend,
};
pub use budget::PipelineBudgets;
pub use executor::{
    classify_outcome, parse_result_line, ExecutionLimits, Executor, ExecutorError,
    ScriptedExecutor, SubprocessExecutor,
};
pub use gate::{run_gate, GateArtifact, ValidationGate};
pub use metric::{is_correct, relative_gap, CORRECTNESS_THRESHOLD};
pub use model::*;
pub use pipeline::{
    run_pipeline, AblationFlags, ConfigError, Pipeline, PipelineOutcome, PipelineSettings,
    RunFailure,
};
pub use prompts::PromptPack;
pub use transcript::{token_totals, Counters, Event, StageTranscript, TokenTotals, TokenUsage};
pub use verdict::{parse_verdict, Decision, Feedback, Stage, StageVerdict};
