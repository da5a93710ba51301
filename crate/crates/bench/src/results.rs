//! Results directory layout.
//!
//! ```text
//! <out>/summary.json                     aggregates
//! <out>/records.json                     one record per instance, suite order
//! <out>/report.md                        tables
//! <out>/transcripts/<id>/r<k>[-<branch>].jsonl
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use trival_core::StageTranscript;

use crate::evaluate::InstanceRecord;
use crate::report::{render_markdown, summarize, Summary};

pub const SUMMARY_FILE: &str = "summary.json";
pub const RECORDS_FILE: &str = "records.json";
pub const REPORT_FILE: &str = "report.md";

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ResultsError + '_ {
    move |source| ResultsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), ResultsError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io(parent))?;
    }
    std::fs::write(path, text).map_err(io(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ResultsError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| ResultsError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Stored records plus the metadata needed to recompute the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordsFile {
    pub suite: String,
    pub variant: String,
    pub repeats: u32,
    pub records: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Results {
    pub summary: Summary,
    pub records: RecordsFile,
}

/// Writes transcripts, records, summary and report under `dir`.
pub fn write_results(
    dir: &Path,
    records: &RecordsFile,
    transcripts: &[(String, StageTranscript)],
) -> Result<Summary, ResultsError> {
    for (rel, t) in transcripts {
        write(&dir.join(rel), &t.to_jsonl())?;
    }
    let summary = summarize(
        &records.suite,
        &records.variant,
        records.repeats,
        &records.records,
    );
    write(
        &dir.join(RECORDS_FILE),
        &(serde_json::to_string_pretty(records).expect("records serialize") + "\n"),
    )?;
    write(
        &dir.join(SUMMARY_FILE),
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;
    write(&dir.join(REPORT_FILE), &render_markdown(&summary))?;
    Ok(summary)
}

/// Loads a results directory. The summary is recomputed from the records and
/// checked against the stored one.
pub fn load_results(dir: &Path) -> Result<Results, ResultsError> {
    let records: RecordsFile = read_json(&dir.join(RECORDS_FILE))?;
    let stored: Summary = read_json(&dir.join(SUMMARY_FILE))?;
    let summary = summarize(
        &records.suite,
        &records.variant,
        records.repeats,
        &records.records,
    );
    if !same_summary(&stored, &summary) {
        return Err(ResultsError::Format {
            path: dir.join(SUMMARY_FILE),
            message: "stored summary does not match the records".into(),
        });
    }
    Ok(Results { summary, records })
}

// JSON round trips may move the last bit of a float.
fn same_summary(a: &Summary, b: &Summary) -> bool {
    let norm = |s: &Summary| {
        let v = serde_json::to_value(s).expect("summary serializes");
        round_floats(v)
    };
    norm(a) == norm(b)
}

fn round_floats(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or_default();
            serde_json::json!((x * 1e9).round() / 1e9)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(o) => {
            Value::Object(o.into_iter().map(|(k, v)| (k, round_floats(v))).collect())
        }
        other => other,
    }
}

/// Reads one transcript referenced by a record.
pub fn load_transcript(dir: &Path, rel: &str) -> Result<StageTranscript, ResultsError> {
    let path = dir.join(rel);
    let text = std::fs::read_to_string(&path).map_err(io(&path))?;
    StageTranscript::from_jsonl(&text).map_err(|e| ResultsError::Format {
        path,
        message: e.to_string(),
    })
}
