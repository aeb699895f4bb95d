use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn postcond(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_postcond"))
        .arg("--config")
        .arg(fixtures().join("config.json"))
        .arg("--store")
        .arg(store)
        .args(args)
        .env("POSTCOND_LOG", "error")
        .output()
        .unwrap()
}

fn ok(store: &Path, args: &[&str]) -> String {
    let out = postcond(store, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn steps_out_of_order_are_domain_errors() {
    let store = tempfile::tempdir().unwrap();
    assert_eq!(postcond(store.path(), &["mutate"]).status.code(), Some(1));
    assert_eq!(postcond(store.path(), &["evaluate"]).status.code(), Some(1));
    assert_eq!(postcond(store.path(), &["report"]).status.code(), Some(1));
    assert_eq!(postcond(store.path(), &["select"]).status.code(), Some(1));
}

#[test]
fn bad_flags_are_usage_errors() {
    let store = tempfile::tempdir().unwrap();
    assert_eq!(postcond(store.path(), &["--workers", "0", "scan"]).status.code(), Some(2));
    assert_eq!(postcond(store.path(), &["no-such-step"]).status.code(), Some(2));
}

#[test]
fn scan_flags_short_method_and_select_is_diverse() {
    let store = tempfile::tempdir().unwrap();
    let out = ok(store.path(), &["scan"]);
    assert!(out.contains("6 pass the candidate filter"), "{out}");
    assert!(out.contains("normalize_tag") && out.contains("candidate=false"));

    let out = ok(store.path(), &["select", "--count", "3"]);
    let picked: Vec<&str> = out.lines().collect();
    assert_eq!(picked.len(), 3);
    assert!(picked.iter().all(|l| l.starts_with("fixture ")));
    assert!(!out.contains("normalize_tag"));
    let again = ok(store.path(), &["select", "--count", "3"]);
    assert_eq!(out, again);
    assert_eq!(postcond(store.path(), &["select", "--count", "50"]).status.code(), Some(1));
}

#[test]
fn full_pipeline_store_layout() {
    let store = tempfile::tempdir().unwrap();
    let s = store.path();
    for step in ["scan", "mutate", "filter-mutants"] {
        ok(s, &[step]);
    }
    let out = ok(s, &["evaluate"]);
    for line in out.lines().filter(|l| l.contains(" sets x ")) {
        assert!(line.ends_with("complete=complete incomplete=correct incorrect=incorrect"), "{line}");
    }
    let run_id = out.lines().last().unwrap().strip_prefix("run ").unwrap().to_string();
    let metrics = ok(s, &["metrics"]);
    assert!(metrics.contains("alpha C2P tasks=6"));
    assert!(metrics.contains("fdr operator-only="));

    // 6 tasks x 2 models x 2 settings x 5 samples.
    let results = std::fs::read_to_string(s.join("results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 120);
    assert!(results.lines().all(|l| l.starts_with("{\"complete\":")));
    assert!(!results.contains('\r'));

    let report = ok(s, &["report", "--run", &run_id]);
    assert!(report.contains(&run_id));
    let csv = std::fs::read_to_string(s.join("reports").join(&run_id).join("report.csv")).unwrap();
    let golden = std::fs::read_to_string(fixtures().join("golden/report.csv")).unwrap();
    assert_eq!(csv, golden);
    assert!(s.join("reports").join(&run_id).join("gaps.csv").is_file());
    assert_eq!(postcond(s, &["report", "--run", "nope"]).status.code(), Some(1));

    // Re-evaluating appends a second run; the original rows stay untouched.
    ok(s, &["evaluate"]);
    let after = std::fs::read_to_string(s.join("results.jsonl")).unwrap();
    assert!(after.starts_with(&results));
    assert_eq!(after.lines().count(), 240);
}
