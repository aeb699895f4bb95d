//! Run manifests and the append-only result store.
//!
//! A store directory holds `results.jsonl`, `runs.jsonl` (one manifest per
//! line, oldest first) and per-run report directories under `reports/`.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::SampleStats;

pub use report::{emit_report, parse_report_csv, render_value, report_rows, ReportFiles, ReportRow};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const RUNS_FILE: &str = "runs.jsonl";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("duplicate result key {0}")]
    DuplicateKey(String),
    #[error("record {0} is complete but not correct")]
    InvalidRecord(String),
    #[error("missing samples for {group}: {missing:?}")]
    MissingSample { group: String, missing: Vec<usize> },
    #[error("no results match the selection")]
    EmptySelection,
    #[error("no runs recorded in store")]
    NoRuns,
    #[error("{0}")]
    Io(String),
}

fn io(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Setting {
    C2P,
    N2P,
    F2P,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::C2P => "C2P",
            Setting::N2P => "N2P",
            Setting::F2P => "F2P",
        }
    }

    pub fn parse(s: &str) -> Option<Setting> {
        match s {
            "C2P" => Some(Setting::C2P),
            "N2P" => Some(Setting::N2P),
            "F2P" => Some(Setting::F2P),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub task_id: String,
    pub setting: Setting,
    pub model_tag: String,
    pub sample_index: usize,
    pub correct: bool,
    pub complete: bool,
    pub kill_row_ref: String,
}

impl ResultRecord {
    pub fn key(&self) -> String {
        format!(
            "{}/{}/{}/{}/{}",
            self.run_id,
            self.task_id,
            self.model_tag,
            self.setting.as_str(),
            self.sample_index
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// The effective config document, byte for byte.
    pub config_snapshot: String,
    pub tool_version: String,
    pub seed: u64,
    pub started: String,
    #[serde(default)]
    pub finished: Option<String>,
}

pub fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(config_snapshot: &str, seed: u64) -> Self {
        let suffix: u32 = rand::rng().random();
        RunManifest {
            run_id: format!("{}-{suffix:08x}", chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ")),
            config_snapshot: config_snapshot.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started: now_utc(),
            finished: None,
        }
    }
}

/// Serializes with object keys sorted.
pub fn canonical_line<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("value serializes");
    serde_json::to_string(&v).expect("value serializes")
}

/// Parses JSONL, skipping blank lines and tolerating one truncated final
/// line (which is reported by its byte offset).
fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Option<usize>), StoreError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(io(path, e)),
    };
    let mut out = Vec::new();
    let mut offset = 0;
    let mut partial = None;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.trim_end_matches('\n');
        if body.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(body) {
            Ok(v) => out.push(v),
            Err(_) if !line.ends_with('\n') => {
                tracing::warn!(path = %path.display(), "ignoring truncated trailing record");
                partial = Some(start);
            }
            Err(e) => return Err(io(path, format!("byte {start}: {e}"))),
        }
    }
    Ok((out, partial))
}

fn append_lines(path: &Path, lines: &str, truncate_at: Option<usize>) -> Result<(), StoreError> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io(path, e))?;
    if let Some(at) = truncate_at {
        file.set_len(at as u64).map_err(|e| io(path, e))?;
    } else if file.metadata().map_err(|e| io(path, e))?.len() > 0 {
        // A final line without LF that still parsed: terminate it first.
        let text = std::fs::read(path).map_err(|e| io(path, e))?;
        if text.last() != Some(&b'\n') {
            file.write_all(b"\n").map_err(|e| io(path, e))?;
        }
    }
    file.write_all(lines.as_bytes()).map_err(|e| io(path, e))?;
    file.sync_all().map_err(|e| io(path, e))
}

pub fn init_store(store: &Path) -> Result<(), StoreError> {
    std::fs::create_dir_all(store).map_err(|e| io(store, e))
}

pub fn read_records(store: &Path) -> Result<Vec<ResultRecord>, StoreError> {
    Ok(read_jsonl(&store.join(RESULTS_FILE))?.0)
}

/// Appends `records` in one write followed by fsync. Nothing is written when
/// any key already exists or repeats within the batch.
pub fn append_records(store: &Path, records: &[ResultRecord]) -> Result<usize, StoreError> {
    let path = store.join(RESULTS_FILE);
    let (existing, partial) = read_jsonl::<ResultRecord>(&path)?;
    let mut keys: BTreeSet<String> = existing.iter().map(ResultRecord::key).collect();
    let mut lines = String::new();
    for r in records {
        if r.complete && !r.correct {
            return Err(StoreError::InvalidRecord(r.key()));
        }
        if !keys.insert(r.key()) {
            return Err(StoreError::DuplicateKey(r.key()));
        }
        lines.push_str(&canonical_line(r));
        lines.push('\n');
    }
    if !records.is_empty() {
        append_lines(&path, &lines, partial)?;
    }
    Ok(records.len())
}

pub fn record_run(store: &Path, manifest: &RunManifest) -> Result<(), StoreError> {
    let path = store.join(RUNS_FILE);
    let (_, partial) = read_jsonl::<RunManifest>(&path)?;
    append_lines(&path, &format!("{}\n", canonical_line(manifest)), partial)
}

pub fn read_runs(store: &Path) -> Result<Vec<RunManifest>, StoreError> {
    Ok(read_jsonl(&store.join(RUNS_FILE))?.0)
}

pub fn latest_run(store: &Path) -> Result<RunManifest, StoreError> {
    read_runs(store)?.pop().ok_or(StoreError::NoRuns)
}

pub fn report_dir(store: &Path, run_id: &str) -> PathBuf {
    store.join("reports").join(run_id)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordFilter {
    pub run_id: Option<String>,
    pub task_id: Option<String>,
    pub model_tag: Option<String>,
    pub setting: Option<Setting>,
}

impl RecordFilter {
    pub fn matches(&self, r: &ResultRecord) -> bool {
        self.run_id.as_ref().is_none_or(|x| *x == r.run_id)
            && self.task_id.as_ref().is_none_or(|x| *x == r.task_id)
            && self.model_tag.as_ref().is_none_or(|x| *x == r.model_tag)
            && self.setting.is_none_or(|x| x == r.setting)
    }
}

/// Groups records by (task, model, setting). `n` is one past the largest
/// sample index; every index below it must be present exactly once.
pub fn aggregate_records(records: &[ResultRecord], filter: &RecordFilter) -> Result<Vec<SampleStats>, StoreError> {
    let mut groups: BTreeMap<(String, String, Setting), BTreeMap<usize, &ResultRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| filter.matches(r)) {
        let g = groups
            .entry((r.task_id.clone(), r.model_tag.clone(), r.setting))
            .or_default();
        if g.insert(r.sample_index, r).is_some() {
            return Err(StoreError::DuplicateKey(r.key()));
        }
    }
    if groups.is_empty() {
        return Err(StoreError::EmptySelection);
    }
    let mut out = Vec::new();
    for ((task, model, setting), samples) in groups {
        let n = samples.keys().next_back().map_or(0, |m| m + 1);
        let missing: Vec<usize> = (0..n).filter(|i| !samples.contains_key(i)).collect();
        if !missing.is_empty() {
            return Err(StoreError::MissingSample {
                group: format!("{task}/{model}/{}", setting.as_str()),
                missing,
            });
        }
        let per_sample = samples.values().map(|r| (r.correct, r.complete)).collect();
        let mut s = SampleStats::from_samples(task, per_sample);
        s.model_tag = model;
        s.setting = setting.as_str().to_string();
        out.push(s);
    }
    Ok(out)
}

pub fn aggregate(store: &Path, filter: &RecordFilter) -> Result<Vec<SampleStats>, StoreError> {
    aggregate_records(&read_records(store)?, filter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(task: &str, idx: usize, correct: bool, complete: bool) -> ResultRecord {
        ResultRecord {
            run_id: "r1".into(),
            task_id: task.into(),
            setting: Setting::C2P,
            model_tag: "m".into(),
            sample_index: idx,
            correct,
            complete,
            kill_row_ref: format!("{task}/s{idx}"),
        }
    }

    #[test]
    fn append_and_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let rs = vec![rec("a", 0, true, true), rec("a", 1, false, false), rec("a", 2, true, false)];
        assert_eq!(append_records(dir.path(), &rs).unwrap(), 3);
        let before = std::fs::read(dir.path().join(RESULTS_FILE)).unwrap();
        assert!(matches!(append_records(dir.path(), &rs[..1]), Err(StoreError::DuplicateKey(_))));
        assert_eq!(std::fs::read(dir.path().join(RESULTS_FILE)).unwrap(), before);
        let text = String::from_utf8(before).unwrap();
        assert!(text.starts_with("{\"complete\":true,\"correct\":true,\"kill_row_ref\":"));
        assert!(matches!(
            append_records(dir.path(), &[rec("b", 0, false, true)]),
            Err(StoreError::InvalidRecord(_))
        ));
    }

    #[test]
    fn truncated_tail_is_ignored_and_replaced() {
        let dir = tempfile::tempdir().unwrap();
        append_records(dir.path(), &[rec("a", 0, true, false)]).unwrap();
        let path = dir.path().join(RESULTS_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"complete\":fal").unwrap();
        assert_eq!(read_records(dir.path()).unwrap().len(), 1);
        append_records(dir.path(), &[rec("a", 1, true, true)]).unwrap();
        let recs = read_records(dir.path()).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(!std::fs::read_to_string(&path).unwrap().contains("fal\n"));
    }

    #[test]
    fn aggregate_examples() {
        let rs = vec![
            rec("a", 0, true, true),
            rec("a", 1, true, false),
            rec("a", 2, false, false),
            rec("a", 3, false, false),
            rec("a", 4, false, false),
        ];
        let s = aggregate_records(&rs, &RecordFilter::default()).unwrap();
        assert_eq!((s[0].n, s[0].c_corr, s[0].c_comp), (5, 2, 1));
        let none = RecordFilter {
            model_tag: Some("zz".into()),
            ..Default::default()
        };
        assert_eq!(aggregate_records(&rs, &none), Err(StoreError::EmptySelection));
        let gappy = vec![rec("a", 0, true, true), rec("a", 1, true, false), rec("a", 3, false, false)];
        assert_eq!(
            aggregate_records(&gappy, &RecordFilter::default()),
            Err(StoreError::MissingSample {
                group: "a/m/C2P".into(),
                missing: vec![2]
            })
        );
    }

    #[test]
    fn run_ids_are_unique_and_latest_wins() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunManifest::new("{}", 1);
        let b = RunManifest::new("{}", 1);
        assert_ne!(a.run_id, b.run_id);
        record_run(dir.path(), &a).unwrap();
        record_run(dir.path(), &b).unwrap();
        assert_eq!(latest_run(dir.path()).unwrap(), b);
    }

    proptest! {
        #[test]
        fn aggregation_ignores_order(flags in prop::collection::vec((any::<bool>(), any::<bool>()), 1..12), seed in any::<u64>()) {
            let rs: Vec<ResultRecord> = flags
                .iter()
                .enumerate()
                .map(|(i, &(c, k))| rec(if i % 2 == 0 { "a" } else { "b" }, i / 2, c, c && k))
                .collect();
            let mut shuffled = rs.clone();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            prop_assert_eq!(
                aggregate_records(&rs, &RecordFilter::default()),
                aggregate_records(&shuffled, &RecordFilter::default())
            );
        }
    }
}
