use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::GeneratedProgram;

/// One tool call of the code agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolAction {
    Read,
    Write { content: String },
    Edit { anchor: String, replacement: String },
}

impl ToolAction {
    pub fn is_mutation(&self) -> bool {
        !matches!(self, ToolAction::Read)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("write content is empty")]
    EmptyWrite,
    #[error("edit anchor is empty")]
    EmptyAnchor,
    #[error("edit anchor not found in the current program")]
    AnchorNotFound,
    #[error("edit anchor occurs {0} times; include more surrounding text so it is unique")]
    AmbiguousAnchor(usize),
}

/// The single program file the agent works on.
///
/// `history` holds every accepted write and edit since the last reset, so
/// replaying it from an empty file reproduces `text`. Revisions keep counting
/// across resets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CodeWorkspace {
    text: String,
    history: Vec<ToolAction>,
    base_revision: u32,
}

impl CodeWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty()
    }

    pub fn history(&self) -> &[ToolAction] {
        &self.history
    }

    pub fn revision(&self) -> u32 {
        self.base_revision + self.history.len() as u32
    }

    /// Applies `action`. Reads return the current text; rejected actions
    /// leave the workspace unchanged.
    pub fn apply(&mut self, action: &ToolAction) -> Result<String, ToolError> {
        match action {
            ToolAction::Read => return Ok(self.text.clone()),
            ToolAction::Write { content } => {
                if content.trim().is_empty() {
                    return Err(ToolError::EmptyWrite);
                }
                self.text = content.clone();
            }
            ToolAction::Edit {
                anchor,
                replacement,
            } => {
                self.text = apply_edit(&self.text, anchor, replacement)?;
            }
        }
        self.history.push(action.clone());
        Ok(self.text.clone())
    }

    /// Clears the program for a regeneration. The revision counter carries on.
    pub fn reset(&mut self) {
        self.base_revision = self.revision();
        self.history.clear();
        self.text.clear();
    }

    pub fn program(&self, language_tag: &str) -> GeneratedProgram {
        GeneratedProgram {
            source: self.text.clone(),
            language_tag: language_tag.to_string(),
            revision: self.revision(),
        }
    }
}

fn apply_edit(text: &str, anchor: &str, replacement: &str) -> Result<String, ToolError> {
    if anchor.is_empty() {
        return Err(ToolError::EmptyAnchor);
    }
    match text.matches(anchor).count() {
        0 => Err(ToolError::AnchorNotFound),
        1 => Ok(text.replacen(anchor, replacement, 1)),
        n => Err(ToolError::AmbiguousAnchor(n)),
    }
}

/// Replays `actions` on an empty file. Reads are skipped.
pub fn replay(actions: &[ToolAction]) -> Result<String, ToolError> {
    let mut ws = CodeWorkspace::new();
    for a in actions {
        ws.apply(a)?;
    }
    Ok(ws.text)
}
