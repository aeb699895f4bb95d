//! Bounded LLM-driven repair of a project's build/test configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, PipelineError};
use crate::harness::{classify_plain_run, run_suite, PlainClass, RunnerSpec};
use crate::llmclient::{CompletionClient, PromptRequest};
use crate::mutgen::unified_diff;

pub const DEFAULT_MAX_ROUNDS: usize = 5;
const LOG_CHARS: usize = 8000;

const SYSTEM: &str = "You repair the test environment of a software project. You see the output of \
the failing test command and the current contents of its configuration files. Reply with complete \
replacement contents for the configuration files you want to change, each wrapped as\n\
=== FILE: <name> ===\n<contents>\n=== END FILE ===\nOnly the listed configuration files may be edited.";

pub fn default_config_allowlist() -> Vec<String> {
    [
        "Cargo.toml",
        "Makefile",
        "build.gradle",
        "package.json",
        "pom.xml",
        "pyproject.toml",
        "requirements.txt",
        "setup.cfg",
        "setup.py",
        "tox.ini",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEdit {
    pub file: String,
    pub diff: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairRound {
    pub round: usize,
    pub request_id: String,
    pub prompt: String,
    pub response: String,
    pub edits: Vec<FileEdit>,
    /// Files the response named that are not on the allowlist.
    pub rejected: Vec<String>,
    pub check: PlainClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub success: bool,
    pub initial_check: PlainClass,
    pub rounds: Vec<RepairRound>,
}

impl RepairReport {
    pub fn edit_count(&self) -> usize {
        self.rounds.iter().map(|r| r.edits.len()).sum()
    }
}

/// `(name, contents)` pairs from `=== FILE: name ===` … `=== END FILE ===`
/// blocks. Unterminated blocks are dropped.
pub fn parse_file_blocks(response: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut current: Option<(String, String)> = None;
    for line in response.split_inclusive('\n') {
        let bare = line.trim_end_matches(['\n', '\r']);
        if let Some(name) = bare.strip_prefix("=== FILE: ").and_then(|r| r.strip_suffix(" ===")) {
            current = Some((name.trim().to_string(), String::new()));
        } else if bare == "=== END FILE ===" {
            if let Some(block) = current.take() {
                out.push(block);
            }
        } else if let Some((_, body)) = current.as_mut() {
            body.push_str(line);
        }
    }
    out
}

fn tail(log: &str, max: usize) -> &str {
    let count = log.chars().count();
    if count <= max {
        return log;
    }
    let skip = log.char_indices().nth(count - max).map_or(0, |(i, _)| i);
    &log[skip..]
}

pub fn repair_prompt(log: &str, configs: &[(String, Option<String>)]) -> PromptRequest {
    let mut user = format!("Test command output:\n{}\n", tail(log, LOG_CHARS));
    for (name, text) in configs {
        match text {
            Some(t) => user.push_str(&format!("\n=== FILE: {name} ===\n{t}=== END FILE ===\n")),
            None => user.push_str(&format!("\n{name}: (absent)\n")),
        }
    }
    PromptRequest::new(SYSTEM, user)
}

fn run_check(project_dir: &Path, check: &RunnerSpec) -> Result<(PlainClass, String), PipelineError> {
    let spec = RunnerSpec {
        working_dir: project_dir.to_path_buf(),
        ..check.clone()
    };
    let outcome = run_suite(&[], &spec, false).map_err(|e| PipelineError::Io(e.to_string()))?;
    Ok((classify_plain_run(&outcome), outcome.log_excerpt))
}

/// Runs the check; while it fails and rounds remain, asks the client for
/// whole-file config replacements, applies the allowlisted ones, and
/// re-runs. Rounds with rejected edits still count.
pub fn environment_repair_loop(
    project_dir: &Path,
    check: &RunnerSpec,
    client: &dyn CompletionClient,
    allowlist: &[String],
    max_rounds: usize,
) -> Result<RepairReport, PipelineError> {
    let (initial_check, mut log) = run_check(project_dir, check)?;
    let mut report = RepairReport {
        success: initial_check == PlainClass::Pass,
        initial_check,
        rounds: Vec::new(),
    };
    for round in 1..=max_rounds {
        if report.success {
            break;
        }
        let configs: Vec<(String, Option<String>)> = allowlist
            .iter()
            .map(|name| (name.clone(), std::fs::read_to_string(project_dir.join(name)).ok()))
            .collect();
        let req = repair_prompt(&log, &configs);
        let response = client.complete(&req)?;
        let mut edits = Vec::new();
        let mut rejected = Vec::new();
        for (name, body) in parse_file_blocks(&response) {
            if !allowlist.contains(&name) {
                tracing::warn!(file = %name, round, "rejecting edit outside the config allowlist");
                rejected.push(name);
                continue;
            }
            let path = project_dir.join(&name);
            let before = std::fs::read_to_string(&path).unwrap_or_default();
            std::fs::write(&path, &body).map_err(|e| io_err(&path, e))?;
            edits.push(FileEdit {
                diff: unified_diff(&name, &before, &body),
                file: name,
            });
        }
        let (class, next_log) = run_check(project_dir, check)?;
        log = next_log;
        report.success = class == PlainClass::Pass;
        report.rounds.push(RepairRound {
            round,
            request_id: req.request_id,
            prompt: req.user,
            response,
            edits,
            rejected,
            check: class,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llmclient::ClientError;
    use std::sync::Mutex;

    struct Script(Mutex<Vec<Result<String, ClientError>>>);

    impl CompletionClient for Script {
        fn complete(&self, _req: &PromptRequest) -> Result<String, ClientError> {
            self.0.lock().unwrap().remove(0)
        }
    }

    fn project(cfg: &str) -> (tempfile::TempDir, RunnerSpec) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("env.cfg"), cfg).unwrap();
        let spec = RunnerSpec::process(dir.path(), "grep -q '^ready=1$' env.cfg", 10_000);
        (dir, spec)
    }

    fn allow() -> Vec<String> {
        vec!["env.cfg".to_string()]
    }

    #[test]
    fn block_parsing() {
        let r = "x\n=== FILE: a.cfg ===\nk=1\n=== END FILE ===\n=== FILE: b ===\nnever closed\n";
        assert_eq!(parse_file_blocks(r), vec![("a.cfg".to_string(), "k=1\n".to_string())]);
    }

    #[test]
    fn passing_check_needs_no_rounds() {
        let (dir, spec) = project("ready=1\n");
        let client = Script(Mutex::new(vec![]));
        let r = environment_repair_loop(dir.path(), &spec, &client, &allow(), 5).unwrap();
        assert!(r.success);
        assert_eq!((r.rounds.len(), r.edit_count()), (0, 0));
    }

    #[test]
    fn fixed_in_first_round_with_rejected_edit() {
        let (dir, spec) = project("ready=0\n");
        let client = Script(Mutex::new(vec![Ok(
            "=== FILE: env.cfg ===\nready=1\n=== END FILE ===\n=== FILE: src/main.fx ===\nhack\n=== END FILE ===\n".into(),
        )]));
        let r = environment_repair_loop(dir.path(), &spec, &client, &allow(), 5).unwrap();
        assert!(r.success);
        assert_eq!(r.initial_check, PlainClass::TestFail);
        assert_eq!(r.rounds.len(), 1);
        assert_eq!(r.rounds[0].rejected, vec!["src/main.fx"]);
        assert!(r.rounds[0].edits[0].diff.contains("-ready=0\n+ready=1\n"));
        assert!(!dir.path().join("src").exists());
    }

    #[test]
    fn exhausts_rounds_and_propagates_client_errors() {
        let (dir, spec) = project("ready=0\n");
        let client = Script(Mutex::new((0..3).map(|_| Ok("no idea".to_string())).collect()));
        let r = environment_repair_loop(dir.path(), &spec, &client, &allow(), 3).unwrap();
        assert!(!r.success);
        assert_eq!(r.rounds.len(), 3);
        let client = Script(Mutex::new(vec![Err(ClientError::Http(400))]));
        assert!(matches!(
            environment_repair_loop(dir.path(), &spec, &client, &allow(), 3),
            Err(PipelineError::Client(ClientError::Http(400)))
        ));
    }
}
