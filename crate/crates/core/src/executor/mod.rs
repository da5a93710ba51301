//! Program execution and the result-line protocol.
//!
//! A program reports its answer by printing one line to stdout:
//!
//! ```text
//! TRIVAL_RESULT {"objective": 42.0, "status": "OPTIMAL"}
//! ```
//!
//! The last such line wins. [`classify_outcome`] maps a finished process to
//! an [`ExecutionReport`]; it is pure, so recorded outcomes can be replayed
//! without an interpreter.

mod manifest;
mod subprocess;

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ExecutionReport, ExecutionStatus, GeneratedProgram};

pub use manifest::{FixtureEntry, FixtureManifest, ManifestError, MANIFEST_SCHEMA_VERSION};
pub use subprocess::{ExecutorConfig, SubprocessExecutor};

pub const SENTINEL: &str = "TRIVAL_RESULT";

/// Seconds added to the timeout to bound a report's wall time.
pub const KILL_GRACE_SECS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub timeout_secs: f64,
    /// Cap on each stdout/stderr excerpt kept in a report.
    pub output_cap_bytes: usize,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        Self {
            timeout_secs: 100.0,
            output_cap_bytes: 16 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecutorError {
    /// The execution environment is broken (e.g. interpreter missing); not a
    /// property of the program.
    #[error("execution environment: {0}")]
    Environment(String),
    #[error("executor I/O: {0}")]
    Io(String),
    #[error("program is empty")]
    EmptyProgram,
    #[error("scripted executor has no report left")]
    Exhausted,
}

/// Something that runs a program and reports what happened.
pub trait Executor: Send + Sync {
    fn execute(
        &self,
        program: &GeneratedProgram,
        limits: &ExecutionLimits,
    ) -> Result<ExecutionReport, ExecutorError>;
}

impl<E: Executor + ?Sized> Executor for std::sync::Arc<E> {
    fn execute(
        &self,
        program: &GeneratedProgram,
        limits: &ExecutionLimits,
    ) -> Result<ExecutionReport, ExecutorError> {
        (**self).execute(program, limits)
    }
}

impl<E: Executor + ?Sized> Executor for &E {
    fn execute(
        &self,
        program: &GeneratedProgram,
        limits: &ExecutionLimits,
    ) -> Result<ExecutionReport, ExecutorError> {
        (**self).execute(program, limits)
    }
}

/// Payload of a result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub objective: Option<f64>,
    pub status: String,
}

/// Formats a result line the way the Python helper prints it.
pub fn format_result_line(objective: f64, status: &str) -> String {
    let payload = serde_json::json!({ "objective": objective, "status": status });
    let body = serde_json::to_string(&payload).expect("payload serializes");
    // json.dumps separators
    format!(
        "{SENTINEL} {}",
        body.replace("\":", "\": ").replace(",\"", ", \"")
    )
}

#[derive(Deserialize)]
struct RawPayload {
    objective: Option<f64>,
    status: String,
}

fn parse_payload(payload: &str) -> Result<ResultLine, String> {
    let parsed = serde_json::from_str::<RawPayload>(payload).or_else(|first| {
        // Python's json.dumps writes NaN and Infinity bare
        let patched = payload
            .replace("-Infinity", "null")
            .replace("Infinity", "null")
            .replace("NaN", "null");
        serde_json::from_str::<RawPayload>(&patched).map_err(|_| first.to_string())
    })?;
    Ok(ResultLine {
        objective: parsed.objective,
        status: parsed.status,
    })
}

/// Payload of the last result line in `stdout`. `None` when there is no
/// result line; `Some(Err(_))` when the last one is malformed.
pub fn parse_result_line(stdout: &str) -> Option<Result<ResultLine, String>> {
    let prefix = format!("{SENTINEL} ");
    stdout
        .lines()
        .rev()
        .map(|l| l.trim_end_matches('\r'))
        .find_map(|l| l.strip_prefix(prefix.as_str()))
        .map(|payload| parse_payload(payload.trim()))
}

/// Solver statuses that count as a usable solution.
pub fn is_success_status(status: &str) -> bool {
    let s = status.trim().to_ascii_uppercase().replace([' ', '-'], "_");
    s == "FEASIBLE" || s.starts_with("OPTIMAL")
}

/// How a child process ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ExitKind {
    Code(i32),
    Signal(i32),
    /// Killed by the executor at the timeout.
    TimedOut,
}

/// Everything observed about one finished child process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessOutcome {
    pub exit: ExitKind,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: f64,
}

/// Keeps the last `cap` bytes of `text`, marking the cut.
pub fn tail_excerpt(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_string();
    }
    let mut start = text.len() - cap;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    format!("[... {start} bytes truncated]\n{}", &text[start..])
}

/// Maps a process outcome to a report:
///
/// | outcome                                            | status                 |
/// |----------------------------------------------------|------------------------|
/// | killed at timeout                                  | timeout                |
/// | nonzero exit or signal                             | runtime_error          |
/// | exit 0, no result line or malformed result line    | parse_failure          |
/// | exit 0, optimal/feasible status with an objective  | executable             |
/// | exit 0, any other solver status                    | abnormal_solver_status |
pub fn classify_outcome(outcome: &ProcessOutcome, output_cap_bytes: usize) -> ExecutionReport {
    let mut report = ExecutionReport {
        status: ExecutionStatus::RuntimeError,
        stdout_excerpt: tail_excerpt(&outcome.stdout, output_cap_bytes),
        stderr_excerpt: tail_excerpt(&outcome.stderr, output_cap_bytes),
        objective: None,
        solver_status: None,
        wall_time: outcome.wall_time,
    };
    report.status = match outcome.exit {
        ExitKind::TimedOut => ExecutionStatus::Timeout,
        ExitKind::Code(0) => match parse_result_line(&outcome.stdout) {
            None => ExecutionStatus::ParseFailure,
            Some(Err(e)) => {
                report.stderr_excerpt = tail_excerpt(
                    &format!("{}\nmalformed {SENTINEL} line: {e}", report.stderr_excerpt),
                    output_cap_bytes,
                );
                ExecutionStatus::ParseFailure
            }
            Some(Ok(line)) => {
                report.solver_status = Some(line.status.clone());
                if !is_success_status(&line.status) {
                    ExecutionStatus::AbnormalSolverStatus
                } else {
                    match line.objective.filter(|o| o.is_finite()) {
                        Some(o) => {
                            report.objective = Some(o);
                            ExecutionStatus::Executable
                        }
                        None => ExecutionStatus::ParseFailure,
                    }
                }
            }
        },
        ExitKind::Code(_) | ExitKind::Signal(_) => ExecutionStatus::RuntimeError,
    };
    report
}

/// Replays a fixed sequence of reports, for tests.
pub struct ScriptedExecutor {
    reports: Mutex<VecDeque<ExecutionReport>>,
    fallback: Option<ExecutionReport>,
    seen: Mutex<Vec<GeneratedProgram>>,
}

impl ScriptedExecutor {
    pub fn new(reports: impl IntoIterator<Item = ExecutionReport>) -> Self {
        Self {
            reports: Mutex::new(reports.into_iter().collect()),
            fallback: None,
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Returns `report` for every execution.
    pub fn always(report: ExecutionReport) -> Self {
        Self {
            fallback: Some(report),
            ..Self::new([])
        }
    }

    /// Once the queue is drained, keep returning `report`.
    pub fn then_always(mut self, report: ExecutionReport) -> Self {
        self.fallback = Some(report);
        self
    }

    /// Programs executed so far, in order.
    pub fn executed(&self) -> Vec<GeneratedProgram> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn calls(&self) -> usize {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl Executor for ScriptedExecutor {
    fn execute(
        &self,
        program: &GeneratedProgram,
        _limits: &ExecutionLimits,
    ) -> Result<ExecutionReport, ExecutorError> {
        if program.source.trim().is_empty() {
            return Err(ExecutorError::EmptyProgram);
        }
        self.seen
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(program.clone());
        let next = self
            .reports
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front();
        next.or_else(|| self.fallback.clone())
            .ok_or(ExecutorError::Exhausted)
    }
}
