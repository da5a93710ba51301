//! Fixture manifest: reference programs with the report each must produce.
//!
//! ```json
//! {"schema_version": 1, "fixtures": [
//!   {"program": "programs/infeasible.py", "status": "abnormal_solver_status",
//!    "solver_status": "INFEASIBLE", "requires": ["scipy"]}
//! ]}
//! ```
//!
//! A recorded outcome for `programs/<name>.py` lives at
//! `recorded/<name>.json` next to the manifest, so the status table can be
//! checked without a Python installation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ProcessOutcome;
use crate::model::{ExecutionReport, ExecutionStatus};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    /// Program path relative to the manifest.
    pub program: PathBuf,
    pub status: ExecutionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr_contains: Option<String>,
    /// Per-fixture timeout; the default limits apply otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
    /// Python modules the program imports beyond the standard library.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requires: Vec<String>,
}

impl FixtureEntry {
    pub fn name(&self) -> String {
        self.program
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    /// Compares a report against the expectation; the message lists every
    /// mismatch.
    pub fn check(&self, report: &ExecutionReport) -> Result<(), String> {
        let mut problems = Vec::new();
        if report.status != self.status {
            problems.push(format!(
                "status {} (expected {})",
                report.status, self.status
            ));
        }
        if let Some(want) = self.objective {
            if report.objective != Some(want) {
                problems.push(format!(
                    "objective {:?} (expected {want})",
                    report.objective
                ));
            }
        }
        if let Some(want) = &self.solver_status {
            if report.solver_status.as_deref() != Some(want.as_str()) {
                problems.push(format!(
                    "solver status {:?} (expected {want})",
                    report.solver_status
                ));
            }
        }
        if let Some(needle) = &self.stderr_contains {
            if !report.stderr_excerpt.contains(needle.as_str()) {
                problems.push(format!("stderr lacks `{needle}`"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(format!("{}: {}", self.name(), problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureManifest {
    pub schema_version: u32,
    pub fixtures: Vec<FixtureEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl FixtureManifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let format = |message: String| ManifestError::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut manifest: FixtureManifest =
            serde_json::from_str(&text).map_err(|e| format(e.to_string()))?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(format(format!(
                "unsupported schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        let mut names: Vec<String> = manifest.fixtures.iter().map(FixtureEntry::name).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(format(format!("duplicate fixture name `{}`", w[0])));
        }
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn program_path(&self, entry: &FixtureEntry) -> PathBuf {
        self.root.join(&entry.program)
    }

    pub fn source(&self, entry: &FixtureEntry) -> Result<String, ManifestError> {
        let path = self.program_path(entry);
        std::fs::read_to_string(&path).map_err(|source| ManifestError::Io { path, source })
    }

    pub fn recorded_path(&self, entry: &FixtureEntry) -> PathBuf {
        self.root
            .join("recorded")
            .join(format!("{}.json", entry.name()))
    }

    pub fn recorded(&self, entry: &FixtureEntry) -> Result<ProcessOutcome, ManifestError> {
        let path = self.recorded_path(entry);
        let text = std::fs::read_to_string(&path).map_err(|source| ManifestError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ManifestError::Format {
            path,
            message: e.to_string(),
        })
    }
}
