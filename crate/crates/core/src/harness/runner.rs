//! Suite execution in PROCESS and BUILTIN modes, and the outcome protocol.

use std::io::Read;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::interp::{run_units, Limits, SuiteReport};
use super::{EvalOutcome, HarnessError, OutcomeKind, PlainClass, RunnerMode, RunnerSpec, VIOLATION_PREFIX};
use crate::frontend::{SourceUnit, FIXTURE_ADAPTER};

/// Interpreter step budget granted per millisecond of timeout. The budget
/// makes BUILTIN timeouts deterministic; the wall clock is only a backstop.
pub const STEPS_PER_MS: u64 = 1_000;

const FIXTURE_EXT: &str = "fx";

/// Marker ids found on stderr, in first-seen order, without duplicates.
fn violation_markers(stderr: &str) -> Vec<String> {
    let mut ids: Vec<String> = Vec::new();
    for line in stderr.lines() {
        if let Some(id) = line.strip_prefix(VIOLATION_PREFIX) {
            if !id.is_empty() && !id.chars().any(char::is_whitespace) && !ids.iter().any(|s| s == id) {
                ids.push(id.to_string());
            }
        }
    }
    ids
}

fn classify(timed_out: bool, exit: Option<i32>, stderr: &str, woven: bool) -> (OutcomeKind, Vec<String>) {
    if timed_out {
        return (OutcomeKind::Timeout, Vec::new());
    }
    if woven {
        let ids = violation_markers(stderr);
        if !ids.is_empty() {
            return (OutcomeKind::Violation, ids);
        }
    }
    let kind = match exit {
        Some(0) => OutcomeKind::AllPass,
        Some(1) => OutcomeKind::TestFail,
        _ => OutcomeKind::Crash,
    };
    (kind, Vec::new())
}

pub fn classify_plain_run(outcome: &EvalOutcome) -> PlainClass {
    match outcome.kind {
        OutcomeKind::AllPass => PlainClass::Pass,
        OutcomeKind::Violation | OutcomeKind::TestFail => PlainClass::TestFail,
        OutcomeKind::Crash => PlainClass::Crash,
        OutcomeKind::Timeout => PlainClass::Timeout,
    }
}

/// Runs the test suite of `spec.working_dir` with `units` substituted for
/// the files at the same relative paths.
pub fn run_suite(units: &[SourceUnit], spec: &RunnerSpec, contracts_woven: bool) -> Result<EvalOutcome, HarnessError> {
    match spec.mode {
        RunnerMode::Builtin => {
            let start = Instant::now();
            let report = run_fixture_suite(units, &spec.working_dir, spec.timeout_ms)?;
            let ms = start.elapsed().as_millis() as u64;
            let (kind, ids) = classify(report.timed_out(), report.exit_code, &report.stderr, contracts_woven);
            Ok(EvalOutcome::new(kind, ids, ms, &format!("{}{}", report.stdout, report.stderr)))
        }
        RunnerMode::Process => run_process(units, spec, contracts_woven),
    }
}

fn relative_slash_path(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Vec<&str> = rel.components().map(|c| c.as_os_str().to_str()).collect::<Option<_>>()?;
    Some(parts.join("/"))
}

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads every fixture source under `working_dir`, overrides with `units`,
/// and interprets the resulting program set.
pub fn run_fixture_suite(units: &[SourceUnit], working_dir: &Path, timeout_ms: u64) -> Result<SuiteReport, HarnessError> {
    let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", working_dir.display()));
    let mut files = Vec::new();
    collect_files(working_dir, &mut files).map_err(io)?;
    let mut loaded: Vec<SourceUnit> = Vec::new();
    for file in files {
        if file.extension().and_then(|e| e.to_str()) != Some(FIXTURE_EXT) {
            continue;
        }
        let Some(rel) = relative_slash_path(working_dir, &file) else { continue };
        if units.iter().any(|u| u.path == rel) {
            continue;
        }
        let text = std::fs::read_to_string(&file).map_err(io)?;
        loaded.push(SourceUnit {
            unit_id: rel.clone(),
            path: rel,
            text,
            adapter_id: FIXTURE_ADAPTER.into(),
            spans: Vec::new(),
        });
    }
    loaded.extend(units.iter().cloned());
    loaded.sort_by(|a, b| a.path.cmp(&b.path));
    let limits = Limits {
        max_steps: timeout_ms.saturating_mul(STEPS_PER_MS),
        deadline: Some(Instant::now() + Duration::from_millis(timeout_ms)),
    };
    Ok(run_units(&loaded, limits))
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else {
            std::fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

fn drain<R: Read + Send + 'static>(mut pipe: R) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn run_process(units: &[SourceUnit], spec: &RunnerSpec, woven: bool) -> Result<EvalOutcome, HarnessError> {
    let command = spec
        .test_command
        .as_deref()
        .ok_or_else(|| HarnessError::SpawnFailure("PROCESS mode requires test_command".into()))?;
    let io = |e: std::io::Error| HarnessError::Io(e.to_string());
    let sandbox = tempfile::tempdir().map_err(io)?;
    copy_tree(&spec.working_dir, sandbox.path()).map_err(io)?;
    for unit in units {
        let target = sandbox.path().join(&unit.path);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(&target, &unit.text).map_err(io)?;
    }

    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(command)
        .current_dir(sandbox.path())
        .envs(&spec.env)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|e| HarnessError::SpawnFailure(e.to_string()))?;
    let out = drain(child.stdout.take().expect("piped stdout"));
    let err = drain(child.stderr.take().expect("piped stderr"));

    let deadline = start + Duration::from_millis(spec.timeout_ms);
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(io)? {
            break status;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            kill_group(&mut child);
            break child.wait().map_err(io)?;
        }
        thread::sleep(Duration::from_millis(2));
    };
    let ms = start.elapsed().as_millis() as u64;
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    let (kind, ids) = classify(timed_out, status.code(), &stderr, woven);
    Ok(EvalOutcome::new(kind, ids, ms, &format!("{stdout}{stderr}")))
}

fn kill_group(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group; take down anything it spawned
        // so the output pipes close.
        if let Ok(pid) = i32::try_from(child.id()) {
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
        }
    }
    let _ = child.kill();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_order() {
        assert_eq!(classify(true, Some(0), "POSTCOND_VIOLATION:a\n", true).0, OutcomeKind::Timeout);
        assert_eq!(
            classify(false, Some(2), "x\nPOSTCOND_VIOLATION:pc3\n", true),
            (OutcomeKind::Violation, vec!["pc3".to_string()])
        );
        assert_eq!(classify(false, Some(0), "", true).0, OutcomeKind::AllPass);
        assert_eq!(classify(false, Some(1), "", true).0, OutcomeKind::TestFail);
        assert_eq!(classify(false, Some(139), "", true).0, OutcomeKind::Crash);
        assert_eq!(classify(false, None, "", true).0, OutcomeKind::Crash);
    }

    #[test]
    fn markers_must_be_exact_lines() {
        let stderr = " POSTCOND_VIOLATION:a\nPOSTCOND_VIOLATION:b \nPOSTCOND_VIOLATION:\nPOSTCOND_VIOLATION:c\nPOSTCOND_VIOLATION:c\nPOSTCOND_VIOLATION:d\n";
        assert_eq!(violation_markers(stderr), vec!["c", "d"]);
    }

    #[test]
    fn unwoven_runs_ignore_markers() {
        assert_eq!(classify(false, Some(1), "POSTCOND_VIOLATION:a\n", false).0, OutcomeKind::TestFail);
    }
}
