//! Layered configuration: flags > environment > chatvis.toml > defaults.
//!
//! The credential (`LLM_API_KEY`) is environment-only; the config file never
//! holds secrets.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::Deserialize;

use chatvis_core::gateway::{RemoteConfig, RequestProfile, ENV_MODEL};

/// Environment variable overriding the interpreter command.
pub const ENV_INTERPRETER: &str = "CHATVIS_INTERPRETER";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub exec: ExecSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub session: SessionSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub max_retries: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecSection {
    /// Interpreter command, whitespace-split.
    pub interpreter: Option<String>,
    pub timeout_secs: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: Option<usize>,
    pub budget_chars: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSection {
    pub max_iterations: Option<usize>,
}

impl FileConfig {
    /// Load the explicit `--config` path, or `./chatvis.toml` when present,
    /// or defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => {
                let default = PathBuf::from("chatvis.toml");
                default.is_file().then_some(default)
            }
        };
        match path {
            None => Ok(Self::default()),
            Some(path) => {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
            }
        }
    }
}

/// Everything the commands need, after precedence resolution.
#[derive(Debug, Clone)]
pub struct Settings {
    pub profile: RequestProfile,
    pub remote: RemoteConfig,
    pub interpreter_cmd: Vec<String>,
    pub timeout: Duration,
    pub max_iterations: usize,
    pub k: usize,
    pub budget_chars: usize,
}

/// Flag-level overrides collected from the command line.
#[derive(Debug, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub interpreter: Option<String>,
    pub timeout: Option<f64>,
    pub max_iterations: Option<usize>,
    pub k: Option<usize>,
    pub budget_chars: Option<usize>,
}

pub fn resolve(file: &FileConfig, flags: &Overrides) -> Settings {
    let defaults = RequestProfile::default();
    let model = flags
        .model
        .clone()
        .or_else(|| std::env::var(ENV_MODEL).ok().filter(|v| !v.is_empty()))
        .or_else(|| file.llm.model.clone())
        .unwrap_or(defaults.model);
    let temperature = flags
        .temperature
        .or(file.llm.temperature)
        .unwrap_or(defaults.temperature);
    let profile = RequestProfile { model, temperature, max_tokens: file.llm.max_tokens };

    // RemoteConfig::from_env already honors LLM_BASE_URL and LLM_API_KEY.
    let mut remote = RemoteConfig::from_env();
    if std::env::var(chatvis_core::gateway::ENV_BASE_URL).is_err() {
        if let Some(url) = &file.llm.base_url {
            remote.base_url = url.clone();
        }
    }
    if let Some(retries) = file.llm.max_retries {
        remote.max_retries = retries;
    }

    let interpreter = flags
        .interpreter
        .clone()
        .or_else(|| std::env::var(ENV_INTERPRETER).ok().filter(|v| !v.is_empty()))
        .or_else(|| file.exec.interpreter.clone())
        .unwrap_or_else(|| "pvpython".into());
    let interpreter_cmd: Vec<String> =
        interpreter.split_whitespace().map(str::to_string).collect();

    let timeout = Duration::from_secs_f64(
        flags.timeout.or(file.exec.timeout_secs).unwrap_or(300.0).max(0.01),
    );

    Settings {
        profile,
        remote,
        interpreter_cmd,
        timeout,
        max_iterations: flags.max_iterations.or(file.session.max_iterations).unwrap_or(5),
        k: flags.k.or(file.retrieval.k).unwrap_or(5),
        budget_chars: flags.budget_chars.or(file.retrieval.budget_chars).unwrap_or(24_000),
    }
}
