//! Wire format of agent tool calls.
//!
//! ```text
//! TOOL write
//! <<<CONTENT
//! import json
//! ...
//! >>>
//! ```
//!
//! `TOOL edit` takes an `<<<ANCHOR` block and a `<<<REPLACE` block; `TOOL read`
//! takes none. A line holding only `DONE` ends the loop. Any reasoning before
//! the first `TOOL` or `DONE` line is ignored.

use super::workspace::ToolAction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentMove {
    Tool(ToolAction),
    Done,
}

const CLOSE: &str = ">>>";

fn is_done(line: &str) -> bool {
    line.trim()
        .trim_matches(|c: char| matches!(c, '*' | '`' | '.' | '!'))
        .eq_ignore_ascii_case("done")
}

fn tool_name(line: &str) -> Option<&str> {
    let l = line.trim().trim_start_matches(['*', '`', '#', ' ']);
    let rest = l.strip_prefix("TOOL")?;
    let rest = rest.trim_start_matches(':');
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some(rest.trim().trim_end_matches(['*', '`']).trim())
}

/// Reads a `<<<NAME` block starting at or after `lines[*pos]`.
fn block(lines: &[&str], pos: &mut usize, name: &str) -> Result<String, String> {
    let open = format!("<<<{name}");
    while *pos < lines.len() && lines[*pos].trim().is_empty() {
        *pos += 1;
    }
    if *pos >= lines.len() || lines[*pos].trim() != open {
        return Err(format!("expected a `{open}` block"));
    }
    *pos += 1;
    let start = *pos;
    while *pos < lines.len() {
        if lines[*pos].trim_end() == CLOSE {
            let body = lines[start..*pos].join("\n");
            *pos += 1;
            return Ok(body);
        }
        *pos += 1;
    }
    Err(format!("`{open}` block is not closed with `{CLOSE}`"))
}

pub fn parse_agent_reply(reply: &str) -> Result<AgentMove, String> {
    let lines: Vec<&str> = reply.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if is_done(line) {
            return Ok(AgentMove::Done);
        }
        let Some(name) = tool_name(line) else {
            continue;
        };
        let mut pos = i + 1;
        let action = match name.to_ascii_lowercase().as_str() {
            "read" => ToolAction::Read,
            "write" => {
                let mut content = block(&lines, &mut pos, "CONTENT")?;
                content.push('\n');
                ToolAction::Write { content }
            }
            "edit" => {
                let anchor = block(&lines, &mut pos, "ANCHOR")?;
                let replacement = block(&lines, &mut pos, "REPLACE")?;
                ToolAction::Edit {
                    anchor,
                    replacement,
                }
            }
            other => return Err(format!("unknown tool `{other}` (use read, write or edit)")),
        };
        return Ok(AgentMove::Tool(action));
    }
    Err("no tool call or DONE marker found".into())
}

/// Renders `action` in the wire format. Inverse of [`parse_agent_reply`] for
/// content that does not contain a `>>>` line.
pub fn format_action(action: &ToolAction) -> String {
    match action {
        ToolAction::Read => "TOOL read\n".to_string(),
        ToolAction::Write { content } => {
            let body = content.strip_suffix('\n').unwrap_or(content);
            format!("TOOL write\n<<<CONTENT\n{body}\n{CLOSE}\n")
        }
        ToolAction::Edit {
            anchor,
            replacement,
        } => {
            format!("TOOL edit\n<<<ANCHOR\n{anchor}\n{CLOSE}\n<<<REPLACE\n{replacement}\n{CLOSE}\n")
        }
    }
}
