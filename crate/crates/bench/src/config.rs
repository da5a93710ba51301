//! Run configuration, read from TOML.
//!
//! ```toml
//! [budgets]
//! code_rounds = 5
//!
//! [pipeline]
//! ablation = "no-self-correction"   # or ["no-code-validation", ...] or a flag table
//! prompt_pack = "prompts/v2"
//!
//! [bench]
//! repeats = 5
//! parallelism = 4
//!
//! [backend]
//! kind = "scripted"
//! path = "scripts/"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use trival_core::backend::{GenerationSettings, LiveConfig};
use trival_core::executor::ExecutorConfig;
use trival_core::{AblationFlags, ConfigError, PipelineBudgets, PipelineSettings, ScriptMode};

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Syntax { origin: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Pipeline(#[from] ConfigError),
}

/// How ablations may be written: a preset name, a list of presets, or the
/// flag table itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AblationSpec {
    Preset(String),
    List(Vec<String>),
    Flags(AblationFlags),
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec::Preset("full".into())
    }
}

impl AblationSpec {
    pub fn resolve(&self) -> Result<AblationFlags, ConfigError> {
        match self {
            AblationSpec::Preset(p) => AblationFlags::parse_list(p),
            AblationSpec::List(l) => AblationFlags::parse_list(&l.join(",")),
            AblationSpec::Flags(f) => f.validate().map(|_| *f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub ablation: AblationSpec,
    pub parallel_experts: bool,
    pub language_tag: String,
    pub output_cap_bytes: usize,
    /// Directory of a prompt pack; the builtin pack when absent.
    pub prompt_pack: Option<PathBuf>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let s = PipelineSettings::default();
        Self {
            ablation: AblationSpec::default(),
            parallel_experts: s.parallel_experts,
            language_tag: s.language_tag,
            output_cap_bytes: s.output_cap_bytes,
            prompt_pack: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Independent runs per instance; the instance scores best of these.
    pub repeats: u32,
    /// Instances evaluated concurrently.
    pub parallelism: usize,
    /// Ask the backend to attribute each failed instance to an error class.
    pub classify_errors: bool,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            repeats: 1,
            parallelism: 1,
            classify_errors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSpec {
    /// Scripted replies. `path` is one queue file shared by every run, or a
    /// directory with one queue per instance (and branch).
    Scripted {
        path: PathBuf,
        #[serde(default = "default_mode")]
        mode: ScriptMode,
    },
    Live(LiveConfig),
}

fn default_mode() -> ScriptMode {
    ScriptMode::Strict
}

impl BackendSpec {
    /// Parses `live`, `scripted:<path>` or `scripted-lenient:<path>`.
    pub fn parse_cli(text: &str) -> Result<BackendSpec, String> {
        if text == "live" {
            return Ok(BackendSpec::Live(LiveConfig::default()));
        }
        let (kind, path) = text
            .split_once(':')
            .ok_or_else(|| format!("expected `live` or `scripted:<path>`, got `{text}`"))?;
        let mode = match kind {
            "scripted" => ScriptMode::Strict,
            "scripted-lenient" => ScriptMode::Lenient,
            other => return Err(format!("unknown backend kind `{other}`")),
        };
        if path.is_empty() {
            return Err("scripted backend needs a path".into());
        }
        Ok(BackendSpec::Scripted {
            path: PathBuf::from(path),
            mode,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub budgets: PipelineBudgets,
    pub generation: GenerationSettings,
    pub executor: ExecutorConfig,
    pub pipeline: PipelineSection,
    pub bench: BenchSection,
    pub backend: Option<BackendSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, RunConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text, &path.display().to_string())?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &mut config.pipeline.prompt_pack {
            *p = base.join(&*p);
        }
        if let Some(BackendSpec::Scripted { path, .. }) = &mut config.backend {
            *path = base.join(&*path);
        }
        Ok(config)
    }

    pub fn parse(text: &str, origin: &str) -> Result<RunConfig, RunConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| RunConfigError::Syntax {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), RunConfigError> {
        self.settings()?.validate()?;
        if self.bench.repeats == 0 {
            return Err(RunConfigError::Invalid(
                "bench.repeats must be at least 1".into(),
            ));
        }
        if self.bench.parallelism == 0 {
            return Err(RunConfigError::Invalid(
                "bench.parallelism must be at least 1".into(),
            ));
        }
        if self.executor.interpreter.is_empty() {
            return Err(RunConfigError::Invalid(
                "executor.interpreter must not be empty".into(),
            ));
        }
        Ok(())
    }

    pub fn settings(&self) -> Result<PipelineSettings, RunConfigError> {
        Ok(PipelineSettings {
            budgets: self.budgets.clone(),
            ablation: self.pipeline.ablation.resolve()?,
            generation: self.generation.clone(),
            parallel_experts: self.pipeline.parallel_experts,
            language_tag: self.pipeline.language_tag.clone(),
            output_cap_bytes: self.pipeline.output_cap_bytes,
        })
    }
}
