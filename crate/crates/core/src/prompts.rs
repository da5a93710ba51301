//! Versioned prompt packs.
//!
//! A pack is a directory holding `pack.toml` plus one `<name>.txt` template
//! per entry of [`TEMPLATES`] and per expert. Templates use `{{key}}`
//! placeholders; rendering fails if a placeholder has no value. The default
//! pack is compiled into the binary.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

/// Templates every pack must provide, in addition to its expert files.
pub const TEMPLATES: &[&str] = &[
    "semantic_extract",
    "semantic_resolve",
    "semantic_validate",
    "semantic_revise",
    "formulation_expert",
    "formulation_format",
    "formulation_select",
    "formulation_validate",
    "formulation_revise",
    "code_system",
    "code_tools",
    "solver_knowledge",
    "code_generate",
    "code_self_correct",
    "code_revise",
    "code_validate",
    "reminder_json",
    "reminder_verdict",
    "reminder_tool",
    "classify_error",
];

macro_rules! builtin {
    ($($name:literal),+ $(,)?) => {
        &[$(($name, include_str!(concat!("../prompts/v1/", $name, ".txt")))),+]
    };
}

const BUILTIN_MANIFEST: &str = include_str!("../prompts/v1/pack.toml");
const BUILTIN_FILES: &[(&str, &str)] = builtin!(
    "semantic_extract",
    "semantic_resolve",
    "semantic_validate",
    "semantic_revise",
    "formulation_expert",
    "formulation_format",
    "formulation_select",
    "formulation_validate",
    "formulation_revise",
    "code_system",
    "code_tools",
    "solver_knowledge",
    "code_generate",
    "code_self_correct",
    "code_revise",
    "code_validate",
    "reminder_json",
    "reminder_verdict",
    "reminder_tool",
    "classify_error",
    "expert_parameter_index",
    "expert_decision_variable",
    "expert_constraint",
    "expert_objective",
    "expert_generalist",
);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt pack: {0}")]
    Pack(String),
    #[error("prompt pack has no template `{0}`")]
    MissingTemplate(String),
    #[error("template `{template}` needs a value for `{key}`")]
    MissingKey { template: String, key: String },
}

/// One formulation expert: a perspective template and the tag recorded as
/// candidate provenance.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ExpertSpec {
    pub tag: String,
    pub template: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: String,
    generalist: String,
    experts: Vec<ExpertSpec>,
}

#[derive(Debug, Clone)]
pub struct PromptPack {
    version: String,
    experts: Vec<ExpertSpec>,
    generalist: ExpertSpec,
    templates: BTreeMap<String, String>,
}

impl PromptPack {
    pub fn builtin() -> Self {
        let files = BUILTIN_FILES
            .iter()
            .map(|(n, t)| (n.to_string(), t.to_string()))
            .collect();
        Self::assemble(BUILTIN_MANIFEST, files).expect("built-in prompt pack is complete")
    }

    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| PromptError::Pack(format!("{}: {e}", dir.join(name).display())))
        };
        let manifest = read("pack.toml")?;
        let mut files = BTreeMap::new();
        for entry in std::fs::read_dir(dir)
            .map_err(|e| PromptError::Pack(format!("{}: {e}", dir.display())))?
        {
            let path = entry.map_err(|e| PromptError::Pack(e.to_string()))?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    files.insert(stem.to_string(), read(&format!("{stem}.txt"))?);
                }
            }
        }
        Self::assemble(&manifest, files)
    }

    fn assemble(manifest: &str, templates: BTreeMap<String, String>) -> Result<Self, PromptError> {
        let m: Manifest =
            toml::from_str(manifest).map_err(|e| PromptError::Pack(format!("pack.toml: {e}")))?;
        if m.experts.is_empty() {
            return Err(PromptError::Pack("at least one expert is required".into()));
        }
        let generalist = ExpertSpec {
            tag: "generalist".into(),
            template: m.generalist,
        };
        let needed = TEMPLATES
            .iter()
            .map(|s| s.to_string())
            .chain(m.experts.iter().map(|e| e.template.clone()))
            .chain(std::iter::once(generalist.template.clone()));
        for name in needed {
            if !templates.contains_key(&name) {
                return Err(PromptError::MissingTemplate(name));
            }
        }
        let mut tags: Vec<&str> = m.experts.iter().map(|e| e.tag.as_str()).collect();
        tags.sort_unstable();
        tags.dedup();
        if tags.len() != m.experts.len() {
            return Err(PromptError::Pack("expert tags must be unique".into()));
        }
        Ok(Self {
            version: m.version,
            experts: m.experts,
            generalist,
            templates,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn experts(&self) -> &[ExpertSpec] {
        &self.experts
    }

    pub fn generalist(&self) -> &ExpertSpec {
        &self.generalist
    }

    pub fn raw(&self, name: &str) -> Result<&str, PromptError> {
        self.templates
            .get(name)
            .map(|s| s.as_str())
            .ok_or_else(|| PromptError::MissingTemplate(name.to_string()))
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        render_template(name, self.raw(name)?, vars)
    }
}

impl Default for PromptPack {
    fn default() -> Self {
        Self::builtin()
    }
}

fn render_template(
    name: &str,
    template: &str,
    vars: &[(&str, &str)],
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            rest = "";
            break;
        };
        let key = after[..end].trim();
        let value = vars
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::MissingKey {
                template: name.to_string(),
                key: key.to_string(),
            })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out.trim_end().to_string())
}
