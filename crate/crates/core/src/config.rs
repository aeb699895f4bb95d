//! The single JSON configuration document read by the CLI.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Secrets never appear here: the transport names the environment
//! variable that carries the API key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::harness::{RunnerMode, RunnerSpec};
use crate::llmclient::Transport;
use crate::metrics::{AblationSpec, DEFAULT_K_VALUES};
use crate::pipeline::{default_config_allowlist, SelectionConfig, DEFAULT_MAX_ROUNDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerConfig {
    #[serde(default = "builtin_mode")]
    pub mode: RunnerMode,
    #[serde(default)]
    pub test_command: Option<String>,
    #[serde(default = "default_runner_timeout")]
    pub timeout_ms: u64,
}

fn builtin_mode() -> RunnerMode {
    RunnerMode::Builtin
}

fn default_runner_timeout() -> u64 {
    120_000
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            mode: RunnerMode::Builtin,
            test_command: None,
            timeout_ms: default_runner_timeout(),
        }
    }
}

impl RunnerConfig {
    pub fn spec(&self, working_dir: &Path) -> RunnerSpec {
        RunnerSpec {
            mode: self.mode,
            test_command: self.test_command.clone(),
            working_dir: working_dir.to_path_buf(),
            timeout_ms: self.timeout_ms,
            env: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepairConfig {
    #[serde(default = "default_config_allowlist")]
    pub allowlist: Vec<String>,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
}

fn default_rounds() -> usize {
    DEFAULT_MAX_ROUNDS
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            allowlist: default_config_allowlist(),
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Trigram,
    Http {
        endpoint: String,
        #[serde(default = "default_auth_var")]
        auth_env_var: String,
        #[serde(default)]
        model: Option<String>,
    },
}

fn default_auth_var() -> String {
    "POSTCOND_API_KEY".into()
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Trigram
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Directory with one subdirectory per task.
    pub corpus: PathBuf,
    /// A bundled catalog name or a path to a catalog file.
    #[serde(default = "default_catalog")]
    pub catalog: String,
    #[serde(default)]
    pub runner: RunnerConfig,
    #[serde(default)]
    pub transport: Option<Transport>,
    #[serde(default)]
    pub llm_mutation: bool,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default = "default_k")]
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub ablations: Vec<AblationSpec>,
    #[serde(default)]
    pub repair: RepairConfig,
}

fn default_catalog() -> String {
    "fixture".into()
}

fn default_k() -> Vec<usize> {
    DEFAULT_K_VALUES.to_vec()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Config {
    /// Parses `text` and resolves relative paths against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Config, String> {
        let mut cfg: Config = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.corpus = resolve(base, &cfg.corpus);
        if let Some(t) = cfg.transport.as_mut() {
            if let Some(p) = t.transcript_path.as_mut() {
                *p = resolve(base, p);
            }
        }
        if !crate::mutgen::Catalog::is_bundled(&cfg.catalog) {
            cfg.catalog = resolve(base, Path::new(&cfg.catalog)).to_string_lossy().into_owned();
        }
        if cfg.k_values.is_empty() || cfg.k_values.contains(&0) {
            return Err("k_values must be non-empty positive integers".into());
        }
        Ok(cfg)
    }
}
