//! Stage verdicts and the validator reply grammar.
//!
//! A validator reply starts with a verdict token on its first non-empty line,
//! optionally followed by `:` and the first line of feedback:
//!
//! ```text
//! PARTIAL_REVISE: constraint 3 scope omits final period
//! constraints: the balance constraint should run over t = 1..T
//! ```
//!
//! Tokens are matched case-insensitively and spaces or hyphens inside a
//! token are read as underscores. Feedback lines shaped `dimension: note`
//! (optionally bulleted) for one of the stage's dimensions are also collected
//! into per-dimension notes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Semantic,
    Formulation,
    Code,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Semantic, Stage::Formulation, Stage::Code];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Semantic => "semantic",
            Stage::Formulation => "formulation",
            Stage::Code => "code",
        }
    }

    /// Decisions a validator at this stage may return.
    pub fn decisions(self) -> &'static [Decision] {
        match self {
            Stage::Semantic => &[Decision::Accept, Decision::Revise],
            Stage::Formulation => &[
                Decision::Accept,
                Decision::PartialRevise,
                Decision::Reformulate,
            ],
            Stage::Code => &[
                Decision::Accept,
                Decision::CodeRevise,
                Decision::FormulationRevise,
            ],
        }
    }

    pub fn allows(self, decision: Decision) -> bool {
        self.decisions().contains(&decision)
    }

    /// Dimension names recognised in per-dimension feedback, with aliases.
    fn dimensions(self) -> &'static [(&'static str, &'static [&'static str])] {
        match self {
            Stage::Semantic => &[
                ("facts", &["factual_faithfulness", "fact", "f"]),
                ("ambiguities", &["ambiguity_relevance", "ambiguity", "a"]),
                (
                    "resolutions",
                    &["resolution_consistency", "resolution", "r"],
                ),
            ],
            Stage::Formulation => &[
                ("variables", &["variable_design", "quality", "qual", "v"]),
                (
                    "constraints",
                    &["constraint_soundness", "soundness", "sound", "c"],
                ),
                (
                    "objective",
                    &["objective_alignment", "alignment", "align", "o"],
                ),
                ("coherence", &["overall", "whole"]),
            ],
            Stage::Code => &[
                ("variables", &["variable", "v"]),
                ("constraints", &["constraint", "c"]),
                ("objective", &["o"]),
                ("execution", &["result", "solver"]),
                ("attribution", &["error_attribution"]),
            ],
        }
    }

    fn dimension_for(self, key: &str) -> Option<&'static str> {
        self.dimensions()
            .iter()
            .find(|(name, aliases)| *name == key || aliases.contains(&key))
            .map(|(name, _)| *name)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "semantic" => Ok(Stage::Semantic),
            "formulation" => Ok(Stage::Formulation),
            "code" => Ok(Stage::Code),
            other => Err(format!("unknown stage `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Revise,
    PartialRevise,
    Reformulate,
    CodeRevise,
    FormulationRevise,
}

impl Decision {
    pub fn token(self) -> &'static str {
        match self {
            Decision::Accept => "ACCEPT",
            Decision::Revise => "REVISE",
            Decision::PartialRevise => "PARTIAL_REVISE",
            Decision::Reformulate => "REFORMULATE",
            Decision::CodeRevise => "CODE_REVISE",
            Decision::FormulationRevise => "FORMULATION_REVISE",
        }
    }

    fn from_token(token: &str) -> Option<Decision> {
        [
            Decision::Accept,
            Decision::Revise,
            Decision::PartialRevise,
            Decision::Reformulate,
            Decision::CodeRevise,
            Decision::FormulationRevise,
        ]
        .into_iter()
        .find(|d| d.token() == token)
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Validator feedback: the whole text plus any per-dimension notes found in it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Feedback {
    pub summary: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl Feedback {
    pub fn text(summary: impl Into<String>) -> Self {
        Self {
            summary: summary.into(),
            notes: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.summary.trim().is_empty() && self.notes.is_empty()
    }

    /// Single text block handed to revisers.
    pub fn render(&self) -> String {
        if !self.summary.trim().is_empty() {
            return self.summary.clone();
        }
        self.notes
            .iter()
            .map(|(dim, note)| format!("{dim}: {note}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerdictError {
    #[error("decision {decision} is not valid at the {stage} stage")]
    WrongStage { stage: Stage, decision: Decision },
    #[error("a {decision} verdict needs non-empty feedback")]
    MissingFeedback { decision: Decision },
}

/// Outcome of one validation gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVerdict")]
pub struct StageVerdict {
    stage: Stage,
    result: Decision,
    feedback: Feedback,
}

#[derive(Deserialize)]
struct RawVerdict {
    stage: Stage,
    result: Decision,
    #[serde(default)]
    feedback: Feedback,
}

impl TryFrom<RawVerdict> for StageVerdict {
    type Error = VerdictError;

    fn try_from(raw: RawVerdict) -> Result<Self, Self::Error> {
        StageVerdict::new(raw.stage, raw.result, raw.feedback)
    }
}

impl StageVerdict {
    pub fn new(stage: Stage, result: Decision, feedback: Feedback) -> Result<Self, VerdictError> {
        if !stage.allows(result) {
            return Err(VerdictError::WrongStage {
                stage,
                decision: result,
            });
        }
        if result != Decision::Accept && feedback.is_empty() {
            return Err(VerdictError::MissingFeedback { decision: result });
        }
        Ok(Self {
            stage,
            result,
            feedback,
        })
    }

    pub fn accept(stage: Stage) -> Self {
        Self {
            stage,
            result: Decision::Accept,
            feedback: Feedback::default(),
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn result(&self) -> Decision {
        self.result
    }

    pub fn feedback(&self) -> &Feedback {
        &self.feedback
    }

    pub fn is_accept(&self) -> bool {
        self.result == Decision::Accept
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerdictParseError {
    #[error("reply is empty")]
    Empty,
    #[error("unknown verdict token `{token}` (expected one of {expected})")]
    UnknownToken { token: String, expected: String },
    #[error(transparent)]
    Invalid(#[from] VerdictError),
}

fn normalize_token(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| matches!(c, '*' | '`' | '#' | '"' | '\'' | '.' | '[' | ']'))
        .trim()
        .to_ascii_uppercase()
        .replace([' ', '-'], "_")
}

/// Parses a validator reply for `stage`.
pub fn parse_verdict(stage: Stage, reply: &str) -> Result<StageVerdict, VerdictParseError> {
    let mut lines = reply.lines().skip_while(|l| l.trim().is_empty());
    let first = lines.next().ok_or(VerdictParseError::Empty)?;
    let mut head = first.trim().trim_start_matches(['*', '#', '`', '>', ' ']);
    for prefix in ["verdict:", "decision:", "result:"] {
        if head.len() >= prefix.len() && head[..prefix.len()].eq_ignore_ascii_case(prefix) {
            head = head[prefix.len()..].trim_start();
        }
    }

    let (token_part, rest) = match head.find(':') {
        Some(i) => (&head[..i], head[i + 1..].trim()),
        None => (head, ""),
    };
    let mut token = normalize_token(token_part);
    let mut rest = rest.to_string();
    let mut decision = Decision::from_token(&token);
    if decision.is_none() && rest.is_empty() {
        // "ACCEPT looks fine" without a colon
        if let Some((word, tail)) = head.split_once(char::is_whitespace) {
            if let Some(d) = Decision::from_token(&normalize_token(word)) {
                decision = Some(d);
                token = normalize_token(word);
                rest = tail.trim().to_string();
            }
        }
    }
    let decision = decision.ok_or_else(|| VerdictParseError::UnknownToken {
        token: token.clone(),
        expected: stage
            .decisions()
            .iter()
            .map(|d| d.token())
            .collect::<Vec<_>>()
            .join(", "),
    })?;

    let mut body: Vec<&str> = Vec::new();
    if !rest.is_empty() {
        body.push(rest.as_str());
    }
    let tail: Vec<&str> = lines.collect();
    body.extend(tail.iter().copied());
    let summary = body.join("\n").trim().to_string();

    let mut notes = BTreeMap::new();
    for line in summary.lines() {
        let l = line.trim().trim_start_matches(['-', '*', '•', ' ']);
        if let Some((key, note)) = l.split_once(':') {
            let key = key.trim().to_ascii_lowercase().replace([' ', '-'], "_");
            let key = key.trim_matches(|c: char| matches!(c, '*' | '`' | '[' | ']' | '(' | ')'));
            if let Some(dim) = stage.dimension_for(key) {
                let note = note.trim();
                if !note.is_empty() {
                    notes
                        .entry(dim.to_string())
                        .and_modify(|n: &mut String| {
                            n.push('\n');
                            n.push_str(note);
                        })
                        .or_insert_with(|| note.to_string());
                }
            }
        }
    }

    let feedback = Feedback { summary, notes };
    Ok(StageVerdict::new(stage, decision, feedback)?)
}
