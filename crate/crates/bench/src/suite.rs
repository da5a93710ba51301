//! Instance suites: one JSON document per suite.
//!
//! ```json
//! {"schema_version": 1, "name": "desk", "instances": [
//!   {"id": "knap-1", "description": "...", "reference_objective": 4,
//!    "variable_type": "integral", "family": "packing", "difficulty": "simple",
//!    "sense": "max", "reference_code": "..."}
//! ]}
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use trival_core::{Difficulty, ProblemInstance, Sense, VariableType};

pub const SUITE_SCHEMA_VERSION: u32 = 1;

const FIELDS: &[&str] = &[
    "id",
    "description",
    "reference_objective",
    "variable_type",
    "family",
    "difficulty",
    "sense",
    "reference_code",
];

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Document { origin: String, message: String },
    #[error("{origin}: instance `{instance}`, field `{field}`: {message}")]
    Field {
        origin: String,
        instance: String,
        field: String,
        message: String,
    },
    #[error("{origin}: duplicate instance id `{id}`")]
    DuplicateId { origin: String, id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub schema_version: u32,
    pub name: String,
    pub instances: Vec<ProblemInstance>,
}

impl Suite {
    pub fn get(&self, id: &str) -> Option<&ProblemInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite serializes") + "\n"
    }
}

pub fn load_suite(path: &Path) -> Result<Suite, SuiteError> {
    let text = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_suite(&text, &path.display().to_string())
}

/// Parses a suite document. `origin` names the source in error messages.
pub fn parse_suite(text: &str, origin: &str) -> Result<Suite, SuiteError> {
    let doc_err = |message: String| SuiteError::Document {
        origin: origin.to_string(),
        message,
    };
    let doc: Value = serde_json::from_str(text).map_err(|e| doc_err(e.to_string()))?;
    let doc = doc
        .as_object()
        .ok_or_else(|| doc_err("top level must be an object".into()))?;
    for key in doc.keys() {
        if !["schema_version", "name", "instances"].contains(&key.as_str()) {
            return Err(doc_err(format!("unknown top-level field `{key}`")));
        }
    }
    let version = doc
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| doc_err("missing numeric `schema_version`".into()))?;
    if version != u64::from(SUITE_SCHEMA_VERSION) {
        return Err(doc_err(format!(
            "unsupported schema_version {version} (expected {SUITE_SCHEMA_VERSION})"
        )));
    }
    let name = match doc.get("name") {
        None => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(doc_err("`name` must be a string".into())),
    };
    let raw = doc
        .get("instances")
        .and_then(Value::as_array)
        .ok_or_else(|| doc_err("missing `instances` array".into()))?;

    let mut seen = HashSet::new();
    let mut instances = Vec::with_capacity(raw.len());
    for (i, value) in raw.iter().enumerate() {
        let inst = parse_instance(value, i, origin)?;
        if !seen.insert(inst.id.clone()) {
            return Err(SuiteError::DuplicateId {
                origin: origin.to_string(),
                id: inst.id,
            });
        }
        instances.push(inst);
    }
    Ok(Suite {
        schema_version: SUITE_SCHEMA_VERSION,
        name,
        instances,
    })
}

struct FieldReader<'a> {
    obj: &'a Map<String, Value>,
    instance: String,
    origin: &'a str,
}

impl FieldReader<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> SuiteError {
        SuiteError::Field {
            origin: self.origin.to_string(),
            instance: self.instance.clone(),
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn required<T: serde::de::DeserializeOwned>(&self, field: &str) -> Result<T, SuiteError> {
        match self.obj.get(field) {
            None => Err(self.err(field, "missing")),
            Some(v) => {
                serde_json::from_value(v.clone()).map_err(|e| self.err(field, e.to_string()))
            }
        }
    }

    fn optional<T: serde::de::DeserializeOwned>(
        &self,
        field: &str,
    ) -> Result<Option<T>, SuiteError> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| self.err(field, e.to_string())),
        }
    }
}

fn parse_instance(
    value: &Value,
    index: usize,
    origin: &str,
) -> Result<ProblemInstance, SuiteError> {
    let label = format!("#{}", index + 1);
    let obj = value.as_object().ok_or_else(|| SuiteError::Field {
        origin: origin.to_string(),
        instance: label.clone(),
        field: "(instance)".into(),
        message: "must be an object".into(),
    })?;
    let instance = obj
        .get("id")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .map(str::to_string)
        .unwrap_or(label);
    let r = FieldReader {
        obj,
        instance,
        origin,
    };
    if let Some(key) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(r.err(key, "unknown field"));
    }

    let id: String = r.required("id")?;
    if id.trim().is_empty() {
        return Err(r.err("id", "must be non-empty"));
    }
    let description: String = r.required("description")?;
    if description.trim().is_empty() {
        return Err(r.err("description", "must be non-empty"));
    }
    let reference_objective: f64 = r.required("reference_objective")?;
    if !reference_objective.is_finite() {
        return Err(r.err("reference_objective", "must be finite"));
    }
    let mut inst = ProblemInstance::new(id, description, reference_objective);
    if let Some(v) = r.optional::<VariableType>("variable_type")? {
        inst.variable_type = v;
    }
    if let Some(f) = r.optional::<String>("family")? {
        if f.trim().is_empty() {
            return Err(r.err("family", "must be non-empty when given"));
        }
        inst.family = f;
    }
    if let Some(d) = r.optional::<Difficulty>("difficulty")? {
        inst.difficulty = d;
    }
    if let Some(s) = r.optional::<Sense>("sense")? {
        inst.sense = s;
    }
    inst.reference_code = r.optional("reference_code")?;
    inst.validate()
        .map_err(|e| r.err("(instance)", e.to_string()))?;
    Ok(inst)
}
