use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid budget `{field}`: {message}")]
pub struct BudgetError {
    pub field: &'static str,
    pub message: String,
}

/// Round limits for the three construct-validate-revise loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineBudgets {
    /// Semantic validation rounds.
    pub semantic_rounds: u32,
    /// Formulation validation rounds.
    pub formulation_rounds: u32,
    /// Code validation rounds.
    pub code_rounds: u32,
    /// Executions per code validation round before giving up on a program
    /// that does not run.
    pub self_correction_rounds: u32,
    /// Wall-clock limit per program execution, seconds.
    pub execution_timeout_secs: f64,
    /// Re-asks after a reply that cannot be parsed.
    pub parse_retries: u32,
    /// Backend calls the code agent may spend on one generation or repair.
    pub agent_steps: u32,
}

impl Default for PipelineBudgets {
    fn default() -> Self {
        Self {
            semantic_rounds: 5,
            formulation_rounds: 5,
            code_rounds: 5,
            self_correction_rounds: 20,
            execution_timeout_secs: 100.0,
            parse_retries: 2,
            agent_steps: 12,
        }
    }
}

impl PipelineBudgets {
    pub fn validate(&self) -> Result<(), BudgetError> {
        let positive = [
            ("semantic_rounds", self.semantic_rounds),
            ("formulation_rounds", self.formulation_rounds),
            ("code_rounds", self.code_rounds),
            ("self_correction_rounds", self.self_correction_rounds),
            ("agent_steps", self.agent_steps),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(BudgetError {
                    field,
                    message: "must be at least 1".into(),
                });
            }
        }
        if !(self.execution_timeout_secs.is_finite() && self.execution_timeout_secs > 0.0) {
            return Err(BudgetError {
                field: "execution_timeout_secs",
                message: format!("must be positive (got {})", self.execution_timeout_secs),
            });
        }
        Ok(())
    }
}
