//! Contract weaving, test-suite execution and tri-valued outcome classification.

pub mod interp;
mod runner;
mod weave;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{MethodRecord, SourceUnit};

pub use interp::VIOLATION_PREFIX;
pub use runner::{classify_plain_run, run_fixture_suite, run_suite, STEPS_PER_MS};
pub use weave::{fixture_template, instrument, render_template, GuardSyntax};

pub const DEFAULT_TIMEOUT_MS: u64 = 120_000;
pub const LOG_EXCERPT_LIMIT: usize = 64 * 1024;
pub const OLD_SNAPSHOTS: &str = "{{OLD_SNAPSHOTS}}";
pub const POSTCONDITIONS: &str = "{{POSTCONDITIONS}}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub cond_id: String,
    pub source_text: String,
    #[serde(default)]
    pub old_exprs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostconditionSet {
    pub set_id: String,
    pub conditions: Vec<Condition>,
    /// Free-form provenance such as model tag, input setting and sample index.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunnerMode {
    Process,
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerSpec {
    pub mode: RunnerMode,
    #[serde(default)]
    pub test_command: Option<String>,
    pub working_dir: PathBuf,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl RunnerSpec {
    pub fn builtin(working_dir: impl Into<PathBuf>, timeout_ms: u64) -> Self {
        RunnerSpec {
            mode: RunnerMode::Builtin,
            test_command: None,
            working_dir: working_dir.into(),
            timeout_ms,
            env: BTreeMap::new(),
        }
    }

    pub fn process(working_dir: impl Into<PathBuf>, command: impl Into<String>, timeout_ms: u64) -> Self {
        RunnerSpec {
            mode: RunnerMode::Process,
            test_command: Some(command.into()),
            working_dir: working_dir.into(),
            timeout_ms,
            env: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeKind {
    AllPass,
    Violation,
    TestFail,
    Crash,
    Timeout,
}

impl OutcomeKind {
    pub fn value(self) -> i8 {
        match self {
            OutcomeKind::AllPass => 1,
            OutcomeKind::Violation => 0,
            OutcomeKind::TestFail | OutcomeKind::Crash | OutcomeKind::Timeout => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub value: i8,
    pub kind: OutcomeKind,
    pub violated_cond_ids: Vec<String>,
    pub duration_ms: u64,
    pub log_excerpt: String,
}

impl EvalOutcome {
    pub fn new(kind: OutcomeKind, violated: Vec<String>, duration_ms: u64, log: &str) -> Self {
        EvalOutcome {
            value: kind.value(),
            kind,
            violated_cond_ids: violated,
            duration_ms,
            log_excerpt: excerpt(log),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlainClass {
    Pass,
    TestFail,
    Crash,
    Timeout,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("no weaving template for method `{0}`")]
    TemplateMissing(String),
    #[error("cannot render condition `{cond_id}`: {message}")]
    RenderError { cond_id: String, message: String },
    #[error("could not start test process: {0}")]
    SpawnFailure(String),
    #[error("io error: {0}")]
    Io(String),
}

fn excerpt(log: &str) -> String {
    if log.len() <= LOG_EXCERPT_LIMIT {
        return log.to_string();
    }
    let mut cut = LOG_EXCERPT_LIMIT;
    while !log.is_char_boundary(cut) {
        cut -= 1;
    }
    log[..cut].to_string()
}

/// eval(m, p): weave `pset` into the variant and run the suite.
pub fn evaluate(
    variant: &SourceUnit,
    method: &MethodRecord,
    pset: &PostconditionSet,
    spec: &RunnerSpec,
) -> Result<EvalOutcome, HarnessError> {
    let woven = instrument(variant, method, pset)?;
    run_suite(&[woven], spec, true)
}

/// Runs the suite against an unwoven variant.
pub fn run_plain(variant: &SourceUnit, spec: &RunnerSpec) -> Result<PlainClass, HarnessError> {
    let outcome = run_suite(std::slice::from_ref(variant), spec, false)?;
    Ok(classify_plain_run(&outcome))
}
