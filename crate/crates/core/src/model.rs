//! Artifacts that flow between the three stages.
//!
//! Everything here is a plain value: constructed once, validated, then shared
//! read-only. Formulation components are structured text records rather than
//! parsed algebra, so validators stay general across problem families.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Violation of an artifact invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{artifact}: {message}")]
pub struct InvariantError {
    pub artifact: &'static str,
    pub message: String,
}

impl InvariantError {
    pub(crate) fn new(artifact: &'static str, message: impl Into<String>) -> Self {
        Self {
            artifact,
            message: message.into(),
        }
    }
}

macro_rules! text_enum {
    (
        $(#[$meta:meta])*
        $name:ident { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "&'static str")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
                match norm.as_str() {
                    $($text $(| $alias)* => Ok($name::$variant),)+
                    _ => Err(format!(
                        "unknown {} `{}` (expected one of: {})",
                        stringify!($name),
                        s,
                        [$($text),+].join(", ")
                    )),
                }
            }
        }

        impl TryFrom<String> for $name {
            type Error = String;

            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }

        impl From<$name> for &'static str {
            fn from(v: $name) -> Self {
                v.as_str()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

text_enum! {
    /// Declared integrality of the decision variables in a benchmark instance.
    VariableType {
        Integral => "integral" | "integer",
        Continuous => "continuous",
        Unspecified => "unspecified",
    }
}

text_enum! {
    Difficulty {
        Simple => "simple",
        Medium => "medium",
        Hard => "hard",
        Unrated => "unrated",
    }
}

text_enum! {
    /// Optimization direction as stated by the instance metadata.
    Sense {
        Min => "min" | "minimize",
        Max => "max" | "maximize",
        Unstated => "unstated",
    }
}

text_enum! {
    FactKind {
        Given => "given" | "given_condition",
        ConstraintRequirement => "constraint_requirement" | "constraint" | "requirement",
        Objective => "objective",
    }
}

text_enum! {
    VariableDomain {
        Binary => "binary" | "bool" | "boolean",
        Integer => "integer" | "int" | "integral",
        Continuous => "continuous" | "real" | "float",
    }
}

text_enum! {
    ObjectiveSense {
        Min => "min" | "minimize" | "minimise",
        Max => "max" | "maximize" | "maximise",
    }
}

fn default_family() -> String {
    "general".to_string()
}

fn default_difficulty() -> Difficulty {
    Difficulty::Unrated
}

fn default_sense() -> Sense {
    Sense::Unstated
}

fn default_variable_type() -> VariableType {
    VariableType::Unspecified
}

/// A natural-language optimization problem together with its reference answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub id: String,
    pub description: String,
    pub reference_objective: f64,
    #[serde(default = "default_variable_type")]
    pub variable_type: VariableType,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "default_difficulty")]
    pub difficulty: Difficulty,
    #[serde(default = "default_sense")]
    pub sense: Sense,
    /// Optional program that reproduces the reference objective. Only suite
    /// validation looks at it; the pipeline never does.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_code: Option<String>,
}

impl ProblemInstance {
    pub fn new(id: impl Into<String>, description: impl Into<String>, reference: f64) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            reference_objective: reference,
            variable_type: VariableType::Unspecified,
            family: default_family(),
            difficulty: Difficulty::Unrated,
            sense: Sense::Unstated,
            reference_code: None,
        }
    }

    pub fn with_variable_type(mut self, variable_type: VariableType) -> Self {
        self.variable_type = variable_type;
        self
    }

    pub fn with_difficulty(mut self, difficulty: Difficulty) -> Self {
        self.difficulty = difficulty;
        self
    }

    pub fn with_family(mut self, family: impl Into<String>) -> Self {
        self.family = family.into();
        self
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        const A: &str = "problem instance";
        if self.id.trim().is_empty() {
            return Err(InvariantError::new(A, "field `id` must be non-empty"));
        }
        if self.description.trim().is_empty() {
            return Err(InvariantError::new(
                A,
                format!("`{}`: field `description` must be non-empty", self.id),
            ));
        }
        if !self.reference_objective.is_finite() {
            return Err(InvariantError::new(
                A,
                format!("`{}`: field `reference_objective` must be finite", self.id),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub text: String,
    pub kind: FactKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ambiguity {
    pub text: String,
    #[serde(default, alias = "impact")]
    pub modeling_impact: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    /// Zero-based index into the ambiguity list.
    #[serde(alias = "ambiguity_index")]
    pub ambiguity: usize,
    #[serde(alias = "resolution")]
    pub interpretation: String,
}

/// Facts, ambiguities and adopted resolutions extracted from a problem.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SemanticSpecification {
    pub facts: Vec<Fact>,
    #[serde(default)]
    pub ambiguities: Vec<Ambiguity>,
    #[serde(default)]
    pub resolutions: Vec<Resolution>,
}

impl SemanticSpecification {
    pub fn validate(&self) -> Result<(), InvariantError> {
        const A: &str = "semantic specification";
        if self.facts.is_empty() {
            return Err(InvariantError::new(A, "fact list is empty"));
        }
        if let Some(f) = self.facts.iter().find(|f| f.text.trim().is_empty()) {
            return Err(InvariantError::new(
                A,
                format!("fact of kind {} has empty text", f.kind),
            ));
        }
        let mut seen = vec![false; self.ambiguities.len()];
        for r in &self.resolutions {
            match seen.get_mut(r.ambiguity) {
                None => {
                    return Err(InvariantError::new(
                        A,
                        format!(
                            "resolution references ambiguity {} but only {} ambiguities exist",
                            r.ambiguity,
                            self.ambiguities.len()
                        ),
                    ))
                }
                Some(true) => {
                    return Err(InvariantError::new(
                        A,
                        format!("ambiguity {} is resolved more than once", r.ambiguity),
                    ))
                }
                Some(slot) => *slot = true,
            }
        }
        Ok(())
    }

    /// Plain-text rendering used inside prompts.
    pub fn render(&self) -> String {
        let mut out = String::from("Facts:\n");
        for (i, f) in self.facts.iter().enumerate() {
            out.push_str(&format!("  F{} [{}] {}\n", i + 1, f.kind, f.text));
        }
        if self.ambiguities.is_empty() {
            out.push_str("Ambiguities: none\n");
        } else {
            out.push_str("Ambiguities:\n");
            for (i, a) in self.ambiguities.iter().enumerate() {
                out.push_str(&format!(
                    "  A{i} {} (impact: {})\n",
                    a.text, a.modeling_impact
                ));
            }
        }
        if !self.resolutions.is_empty() {
            out.push_str("Resolutions:\n");
            for r in &self.resolutions {
                out.push_str(&format!("  A{} -> {}\n", r.ambiguity, r.interpretation));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parameter {
    pub symbol: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub indices: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub symbol: String,
    #[serde(default)]
    pub description: String,
    pub domain: VariableDomain,
    #[serde(default)]
    pub bounds: String,
    #[serde(default)]
    pub indices: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(default)]
    pub label: String,
    pub expression: String,
    #[serde(default)]
    pub scope: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub sense: ObjectiveSense,
    pub expression: String,
}

/// Parameters, variables, constraints and objective of one candidate model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MathFormulation {
    #[serde(default)]
    pub parameters: Vec<Parameter>,
    pub variables: Vec<Variable>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    pub objective: Objective,
    #[serde(default)]
    pub rationale: String,
}

impl MathFormulation {
    pub fn validate(&self) -> Result<(), InvariantError> {
        const A: &str = "formulation";
        if self.variables.is_empty() {
            return Err(InvariantError::new(A, "variable list is empty"));
        }
        if let Some(v) = self.variables.iter().find(|v| v.symbol.trim().is_empty()) {
            return Err(InvariantError::new(
                A,
                format!("variable `{}` has an empty symbol", v.description),
            ));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.expression.trim().is_empty() {
                let name = if c.label.is_empty() {
                    format!("#{}", i + 1)
                } else {
                    c.label.clone()
                };
                return Err(InvariantError::new(
                    A,
                    format!("constraint {name} has an empty expression"),
                ));
            }
        }
        if self.objective.expression.trim().is_empty() {
            return Err(InvariantError::new(A, "objective expression is empty"));
        }
        Ok(())
    }

    pub fn variable_symbols(&self) -> Vec<&str> {
        self.variables.iter().map(|v| v.symbol.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("Parameters:\n");
        for p in &self.parameters {
            out.push_str(&format!(
                "  {} [{}]: {}\n",
                p.symbol, p.indices, p.description
            ));
        }
        out.push_str("Variables:\n");
        for v in &self.variables {
            out.push_str(&format!(
                "  {} [{}] {} {}: {}\n",
                v.symbol, v.indices, v.domain, v.bounds, v.description
            ));
        }
        out.push_str("Constraints:\n");
        for c in &self.constraints {
            out.push_str(&format!(
                "  ({}) {}  for {}\n",
                c.label, c.expression, c.scope
            ));
        }
        out.push_str(&format!(
            "Objective: {} {}\n",
            self.objective.sense, self.objective.expression
        ));
        if !self.rationale.is_empty() {
            out.push_str(&format!("Rationale: {}\n", self.rationale));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    /// Tag of the expert perspective that produced this candidate.
    pub expert: String,
    pub formulation: MathFormulation,
}

/// Candidate formulations from one round of multi-expert exploration, in
/// expert order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Candidate> {
        self.candidates.get(index)
    }
}

/// Solver program text produced by the code agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedProgram {
    pub source: String,
    pub language_tag: String,
    pub revision: u32,
}

text_enum! {
    /// Outcome class of one program execution.
    ExecutionStatus {
        Executable => "executable",
        RuntimeError => "runtime_error",
        Timeout => "timeout",
        AbnormalSolverStatus => "abnormal_solver_status",
        ParseFailure => "parse_failure",
    }
}

impl ExecutionStatus {
    /// The program ran to the end and the solver reported back, whether or
    /// not the reported status was optimal. Such runs leave the
    /// self-correction loop and go to code validation, where an abnormal
    /// status can be attributed to the formulation.
    pub fn ran_to_completion(self) -> bool {
        matches!(
            self,
            ExecutionStatus::Executable | ExecutionStatus::AbnormalSolverStatus
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub status: ExecutionStatus,
    #[serde(default)]
    pub stdout_excerpt: String,
    #[serde(default)]
    pub stderr_excerpt: String,
    #[serde(default)]
    pub objective: Option<f64>,
    #[serde(default)]
    pub solver_status: Option<String>,
    /// Seconds.
    pub wall_time: f64,
}

impl ExecutionReport {
    /// A successful run with the given objective.
    pub fn executable(objective: f64) -> Self {
        Self {
            status: ExecutionStatus::Executable,
            stdout_excerpt: String::new(),
            stderr_excerpt: String::new(),
            objective: Some(objective),
            solver_status: Some("OPTIMAL".into()),
            wall_time: 0.0,
        }
    }

    /// A run that produced no objective.
    pub fn failure(status: ExecutionStatus, stderr: impl Into<String>) -> Self {
        Self {
            status,
            stdout_excerpt: String::new(),
            stderr_excerpt: stderr.into(),
            objective: None,
            solver_status: None,
            wall_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        let has_objective = self.objective.is_some();
        let executable = self.status == ExecutionStatus::Executable;
        if has_objective != executable {
            return Err(InvariantError::new(
                "execution report",
                format!(
                    "objective must be present iff status is executable (status {}, objective {:?})",
                    self.status, self.objective
                ),
            ));
        }
        Ok(())
    }

    /// Text block handed to the agent and the code validator.
    pub fn render(&self) -> String {
        let mut out = format!("status: {}\n", self.status);
        if let Some(s) = &self.solver_status {
            out.push_str(&format!("solver status: {s}\n"));
        }
        if let Some(o) = self.objective {
            out.push_str(&format!("objective: {o}\n"));
        }
        out.push_str(&format!("wall time: {:.2}s\n", self.wall_time));
        if !self.stdout_excerpt.is_empty() {
            out.push_str("stdout:\n");
            out.push_str(&self.stdout_excerpt);
            if !self.stdout_excerpt.ends_with('\n') {
                out.push('\n');
            }
        }
        if !self.stderr_excerpt.is_empty() {
            out.push_str("stderr:\n");
            out.push_str(&self.stderr_excerpt);
            if !self.stderr_excerpt.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}
