//! Builders for scripted runs.
//!
//! [`ScriptBuilder`] queues backend replies in the order a run asks for them,
//! using the purpose tags and reply formats the stages expect. Every entry
//! gets distinct token counts so accounting can be checked against the
//! script.

use std::sync::Mutex;

use crate::backend::{
    BackendError, ChatBackend, ChatReply, ChatRequest, ScriptEntry, ScriptMode, ScriptedBackend,
};
use crate::code::{format_action, ToolAction};
use crate::model::{
    Ambiguity, Constraint, Fact, FactKind, MathFormulation, Objective, ObjectiveSense, Parameter,
    ProblemInstance, Resolution, SemanticSpecification, Variable, VariableDomain, VariableType,
};
use crate::prompts::PromptPack;
use crate::verdict::Stage;

/// A small knapsack instance used across tests.
pub fn knapsack_problem() -> ProblemInstance {
    ProblemInstance::new(
        "knapsack-2",
        "A hiker can carry at most 4 kg. A stove weighs 2 kg and is worth 3 points; \
         a tent weighs 3 kg and is worth 4 points. Which items maximize the total worth?",
        4.0,
    )
    .with_variable_type(VariableType::Integral)
    .with_family("packing")
}

pub fn specification(facts: usize) -> SemanticSpecification {
    SemanticSpecification {
        facts: (0..facts)
            .map(|i| Fact {
                text: format!("fact {i}"),
                kind: if i + 1 == facts {
                    FactKind::Objective
                } else {
                    FactKind::Given
                },
            })
            .collect(),
        ambiguities: Vec::new(),
        resolutions: Vec::new(),
    }
}

pub fn specification_with_ambiguity() -> SemanticSpecification {
    let mut s = specification(2);
    s.ambiguities.push(Ambiguity {
        text: "variable integrality unclear".into(),
        modeling_impact: "integer or continuous items".into(),
    });
    s.resolutions.push(Resolution {
        ambiguity: 0,
        interpretation: "treat as integer".into(),
    });
    s
}

/// A complete knapsack formulation; `tag` goes into the rationale so
/// candidates from different experts differ.
pub fn formulation(tag: &str) -> MathFormulation {
    MathFormulation {
        parameters: vec![
            Parameter {
                symbol: "w_i".into(),
                description: "weight of item i".into(),
                indices: "i in {stove, tent}".into(),
            },
            Parameter {
                symbol: "v_i".into(),
                description: "worth of item i".into(),
                indices: "i in {stove, tent}".into(),
            },
        ],
        variables: vec![Variable {
            symbol: "x_i".into(),
            description: "1 if item i is packed".into(),
            domain: VariableDomain::Binary,
            bounds: "0 <= x_i <= 1".into(),
            indices: "i in {stove, tent}".into(),
        }],
        constraints: vec![Constraint {
            label: "capacity".into(),
            expression: "sum_i w_i x_i <= 4".into(),
            scope: "once".into(),
        }],
        objective: Objective {
            sense: ObjectiveSense::Max,
            expression: "sum_i v_i x_i".into(),
        },
        rationale: format!("written by {tag}"),
    }
}

pub fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("value serializes")
}

/// Extraction reply for `spec` (facts and ambiguities only).
pub fn extraction_reply(spec: &SemanticSpecification) -> String {
    serde_json::json!({ "facts": spec.facts, "ambiguities": spec.ambiguities }).to_string()
}

pub fn resolution_reply(spec: &SemanticSpecification) -> String {
    serde_json::json!({ "resolutions": spec.resolutions }).to_string()
}

pub fn write_reply(source: &str) -> String {
    format!(
        "Writing the program.\n{}",
        format_action(&ToolAction::Write {
            content: source.to_string()
        })
    )
}

pub fn edit_reply(anchor: &str, replacement: &str) -> String {
    format_action(&ToolAction::Edit {
        anchor: anchor.to_string(),
        replacement: replacement.to_string(),
    })
}

pub const READ_REPLY: &str = "TOOL read";
pub const DONE_REPLY: &str = "DONE";

/// Program text for the `n`-th generated version, for scripts that need
/// distinct programs.
pub fn program(n: u32) -> String {
    format!("import json\nvalue = {n}\nprint('TRIVAL_RESULT ' + json.dumps({{'objective': 4.0, 'status': 'OPTIMAL'}}))\n")
}

#[derive(Debug, Clone, Default)]
pub struct ScriptBuilder {
    entries: Vec<ScriptEntry>,
}

impl ScriptBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one reply. Token counts are derived from the position.
    pub fn reply(mut self, purpose: &str, text: impl Into<String>) -> Self {
        let i = self.entries.len() as u64;
        self.entries
            .push(ScriptEntry::new(purpose, text).with_tokens(100 + 7 * i, 20 + 3 * (i % 5)));
        self
    }

    pub fn extract(self, spec: &SemanticSpecification) -> Self {
        let with_resolve = !spec.ambiguities.is_empty();
        let s = self.reply("semantic.extract", extraction_reply(spec));
        if with_resolve {
            s.reply("semantic.resolve", resolution_reply(spec))
        } else {
            s
        }
    }

    /// Extraction of a three-fact specification without ambiguities.
    pub fn construct_semantic(self) -> Self {
        self.extract(&specification(3))
    }

    pub fn verdict(self, stage: Stage, text: &str) -> Self {
        self.reply(&format!("{stage}.validate"), text)
    }

    pub fn accept(self, stage: Stage) -> Self {
        self.verdict(stage, "ACCEPT")
    }

    pub fn semantic_revise(self, spec: &SemanticSpecification) -> Self {
        self.reply("semantic.revise", json(spec))
    }

    /// One reply per expert of the built-in pack, each a valid formulation.
    pub fn experts(mut self) -> Self {
        for e in PromptPack::builtin().experts() {
            self = self.reply(
                &format!("formulation.expert.{}", e.tag),
                json(&formulation(&e.tag)),
            );
        }
        self
    }

    pub fn generalist(self) -> Self {
        self.reply(
            "formulation.expert.generalist",
            json(&formulation("generalist")),
        )
    }

    pub fn select(self, choice: usize) -> Self {
        self.reply(
            "formulation.select",
            format!("{choice}\nIt is the cleanest."),
        )
    }

    pub fn formulation_revise(self, m: &MathFormulation) -> Self {
        self.reply("formulation.revise", json(m))
    }

    /// Agent writes `source` and finishes.
    pub fn generate(self, source: &str) -> Self {
        self.reply("code.agent", write_reply(source))
            .reply("code.agent", DONE_REPLY)
    }

    pub fn self_correct(self, source: &str) -> Self {
        self.reply("code.self_correct", write_reply(source))
            .reply("code.self_correct", DONE_REPLY)
    }

    pub fn code_revise(self, source: &str) -> Self {
        self.reply("code.revise", write_reply(source))
            .reply("code.revise", DONE_REPLY)
    }

    /// Construction of all three artifacts with every validator accepting.
    pub fn all_accept(self) -> Self {
        self.construct_semantic()
            .accept(Stage::Semantic)
            .experts()
            .select(1)
            .accept(Stage::Formulation)
            .generate(&program(1))
            .accept(Stage::Code)
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    /// Total tokens over all queued replies.
    pub fn total_tokens(&self) -> u64 {
        self.entries
            .iter()
            .map(|e| e.prompt_tokens + e.completion_tokens)
            .sum()
    }

    pub fn build(&self) -> ScriptedBackend {
        ScriptedBackend::with_entries(ScriptMode::Strict, self.entries.clone())
    }

    /// The script as a JSON Lines file body.
    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(|e| json(e) + "\n").collect()
    }
}

type Chooser = Box<dyn FnMut(usize) -> usize + Send>;

struct AdversaryState {
    pick: Chooser,
    wrote: bool,
    writes: u32,
}

/// Answers every purpose with a well-formed reply. Validator decisions,
/// selector choices and specification sizes come from `pick(n)`, which must
/// return a value below `n`. The agent alternates between writing a fresh
/// program and finishing.
pub struct AdversaryBackend {
    state: Mutex<AdversaryState>,
}

impl AdversaryBackend {
    pub fn new(pick: impl FnMut(usize) -> usize + Send + 'static) -> Self {
        Self {
            state: Mutex::new(AdversaryState {
                pick: Box::new(pick),
                wrote: false,
                writes: 0,
            }),
        }
    }
}

impl ChatBackend for AdversaryBackend {
    fn id(&self) -> &str {
        "adversary"
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let mut pick = |n: usize| (st.pick)(n).min(n - 1);
        let purpose = request.purpose.as_str();
        let text = match purpose {
            "semantic.extract" => {
                let ambiguous = pick(2) == 1;
                if ambiguous {
                    extraction_reply(&specification_with_ambiguity())
                } else {
                    extraction_reply(&specification(1 + pick(4)))
                }
            }
            "semantic.resolve" => resolution_reply(&specification_with_ambiguity()),
            "semantic.revise" => json(&specification(1 + pick(4))),
            "formulation.select" => (1 + pick(5)).to_string(),
            "formulation.revise" => json(&formulation("reviser")),
            p if p.starts_with("formulation.expert.") => {
                json(&formulation(&p["formulation.expert.".len()..]))
            }
            p if p.ends_with(".validate") => {
                let stage: Stage = p
                    .trim_end_matches(".validate")
                    .parse()
                    .map_err(BackendError::InvalidRequest)?;
                let options = stage.decisions();
                let d = options[pick(options.len())];
                if d == crate::verdict::Decision::Accept {
                    d.token().to_string()
                } else {
                    format!("{}: adversarial objection", d.token())
                }
            }
            "code.agent" | "code.self_correct" | "code.revise" => {
                st.wrote = !st.wrote;
                if st.wrote {
                    st.writes += 1;
                    write_reply(&program(st.writes))
                } else {
                    DONE_REPLY.to_string()
                }
            }
            other => {
                return Err(BackendError::InvalidRequest(format!(
                    "adversary has no reply for `{other}`"
                )))
            }
        };
        Ok(ChatReply {
            prompt_tokens: request.full_text().len() as u64 / 4,
            completion_tokens: text.len() as u64 / 4 + 1,
            text,
            backend_id: "adversary".into(),
        })
    }
}
