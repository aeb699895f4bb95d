//! Correctness and completeness verdicts, kill matrices and defective-mutant filtering.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{MethodRecord, SourceUnit};
use crate::harness::{self, EvalOutcome, OutcomeKind, PlainClass, PostconditionSet, RunnerSpec};
use crate::mutgen::{Mutant, MutantStatus, Scheme};

pub const ORIGINAL: &str = "original";
pub const DEFAULT_MIN_MUTANTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidateError {
    #[error("mutant {0} is not DEFECTIVE")]
    NotDefective(String),
    #[error("kill-matrix store: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub value: i8,
    pub kind: OutcomeKind,
    pub violated: Vec<String>,
    pub ms: u64,
}

impl From<&EvalOutcome> for Cell {
    fn from(o: &EvalOutcome) -> Self {
        Cell {
            value: o.value,
            kind: o.kind,
            violated: o.violated_cond_ids.clone(),
            ms: o.duration_ms,
        }
    }
}

/// One persisted cell; field order is alphabetical so serialized keys are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRecord {
    pub kind: OutcomeKind,
    pub ms: u64,
    pub set: String,
    pub task: String,
    pub value: i8,
    pub variant: String,
    pub violated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantInfo {
    pub id: String,
    /// `None` for the original implementation.
    pub scheme: Option<Scheme>,
    pub operator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KillMatrix {
    pub task_id: String,
    pub set_ids: Vec<String>,
    /// Column 0 is the original implementation.
    pub variants: Vec<VariantInfo>,
    pub cells: Vec<Vec<Cell>>,
}

impl KillMatrix {
    pub fn variant_ids(&self) -> Vec<String> {
        self.variants.iter().map(|v| v.id.clone()).collect()
    }

    pub fn row_values(&self, row: usize) -> Vec<i8> {
        self.cells[row].iter().map(|c| c.value).collect()
    }

    pub fn verdicts(&self) -> Vec<ValidationVerdict> {
        let ids = self.variant_ids();
        (0..self.set_ids.len())
            .map(|i| {
                let mut v = check_completeness(&self.row_values(i), &ids);
                v.set_id = self.set_ids[i].clone();
                v
            })
            .collect()
    }

    /// Matrix with only the mutant columns for which `keep` is true.
    pub fn restrict(&self, mut keep: impl FnMut(usize, &VariantInfo) -> bool) -> KillMatrix {
        let cols: Vec<usize> = (0..self.variants.len())
            .filter(|&j| j == 0 || keep(j, &self.variants[j]))
            .collect();
        KillMatrix {
            task_id: self.task_id.clone(),
            set_ids: self.set_ids.clone(),
            variants: cols.iter().map(|&j| self.variants[j].clone()).collect(),
            cells: self.cells.iter().map(|row| cols.iter().map(|&j| row[j].clone()).collect()).collect(),
        }
    }

    pub fn records(&self) -> Vec<CellRecord> {
        let mut out = Vec::new();
        for (i, set) in self.set_ids.iter().enumerate() {
            for (j, variant) in self.variants.iter().enumerate() {
                let c = &self.cells[i][j];
                out.push(CellRecord {
                    kind: c.kind,
                    ms: c.ms,
                    set: set.clone(),
                    task: self.task_id.clone(),
                    value: c.value,
                    variant: variant.id.clone(),
                    violated: c.violated.clone(),
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub set_id: String,
    pub correct: bool,
    pub complete: bool,
    pub survived_mutants: Vec<String>,
    pub harness_error: bool,
}

/// corr(m, p) ⇔ eval(m, p) = 1. Returns (correct, harness_error).
pub fn check_correctness(original_value: i8) -> (bool, bool) {
    (original_value == 1, original_value == -1)
}

/// `row[0]` is the original; `variant_ids` names the columns.
pub fn check_completeness(row: &[i8], variant_ids: &[String]) -> ValidationVerdict {
    assert!(!row.is_empty(), "a kill-matrix row has at least the original column");
    let (correct, harness_error) = check_correctness(row[0]);
    let survived_mutants: Vec<String> = row
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| **v != 0)
        .map(|(h, _)| variant_ids.get(h).cloned().unwrap_or_else(|| format!("m{h}")))
        .collect();
    ValidationVerdict {
        set_id: String::new(),
        correct,
        complete: correct && survived_mutants.is_empty(),
        survived_mutants,
        harness_error,
    }
}

/// The subject of one task: the unit holding the method under test.
#[derive(Debug, Clone)]
pub struct TaskSubject {
    pub task_id: String,
    pub unit: SourceUnit,
    pub method: MethodRecord,
}

fn evaluate_cell(subject: &TaskSubject, variant: &SourceUnit, pset: &PostconditionSet, spec: &RunnerSpec) -> Cell {
    match harness::evaluate(variant, &subject.method, pset, spec) {
        Ok(o) => Cell::from(&o),
        Err(e) => {
            tracing::warn!(task = %subject.task_id, set = %pset.set_id, error = %e, "harness error");
            Cell {
                value: -1,
                kind: OutcomeKind::Crash,
                violated: Vec::new(),
                ms: 0,
            }
        }
    }
}

/// Reads persisted cells, ignoring a truncated trailing line.
pub fn read_cell_records(path: &Path) -> Result<Vec<CellRecord>, ValidateError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ValidateError::Io(e.to_string())),
    };
    let mut out = Vec::new();
    let lines: Vec<&str> = text.split('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        match serde_json::from_str::<CellRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i == lines.len() - 1 => {
                tracing::warn!(path = %path.display(), "ignoring partial trailing kill-matrix record");
            }
            Err(e) => return Err(ValidateError::Io(format!("{} line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// Evaluates every (set, variant) pair. With `persist`, each finished batch of
/// cells is appended to a JSONL file and cells already present there are reused.
pub fn build_kill_matrix(
    subject: &TaskSubject,
    psets: &[PostconditionSet],
    mutants: &[Mutant],
    spec: &RunnerSpec,
    workers: usize,
    persist: Option<&Path>,
) -> Result<KillMatrix, ValidateError> {
    if let Some(m) = mutants.iter().find(|m| m.status != MutantStatus::Defective) {
        return Err(ValidateError::NotDefective(m.mutant_id.clone()));
    }
    let mut variants = vec![VariantInfo {
        id: ORIGINAL.to_string(),
        scheme: None,
        operator: None,
    }];
    let mut units = vec![subject.unit.clone()];
    for m in mutants {
        variants.push(VariantInfo {
            id: m.mutant_id.clone(),
            scheme: Some(m.scheme),
            operator: m.operator_name.clone(),
        });
        // Fall back to the raw text so a bad mutant surfaces as a CRASH cell.
        units.push(m.unit(&subject.unit).unwrap_or_else(|_| SourceUnit {
            text: m.rendered_text.clone(),
            spans: Vec::new(),
            ..subject.unit.clone()
        }));
    }

    let mut done: HashMap<(String, String), Cell> = HashMap::new();
    if let Some(path) = persist {
        for r in read_cell_records(path)? {
            if r.task == subject.task_id {
                done.insert(
                    (r.set, r.variant),
                    Cell {
                        value: r.value,
                        kind: r.kind,
                        violated: r.violated,
                        ms: r.ms,
                    },
                );
            }
        }
    }
    let mut writer = match persist {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| ValidateError::Io(e.to_string()))?;
            }
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ValidateError::Io(e.to_string()))?,
            )
        }
        None => None,
    };

    let pending: Vec<(usize, usize)> = (0..psets.len())
        .flat_map(|i| (0..variants.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| !done.contains_key(&(psets[i].set_id.clone(), variants[j].id.clone())))
        .collect();
    for batch in pending.chunks(workers.max(1)) {
        let cells: Vec<Cell> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&(i, j)| {
                    let (unit, pset) = (&units[j], &psets[i]);
                    scope.spawn(move || evaluate_cell(subject, unit, pset, spec))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("cell worker panicked")).collect()
        });
        let mut buf = String::new();
        for (&(i, j), cell) in batch.iter().zip(cells) {
            let key = (psets[i].set_id.clone(), variants[j].id.clone());
            let record = CellRecord {
                kind: cell.kind,
                ms: cell.ms,
                set: key.0.clone(),
                task: subject.task_id.clone(),
                value: cell.value,
                variant: key.1.clone(),
                violated: cell.violated.clone(),
            };
            buf.push_str(&serde_json::to_string(&record).expect("record serializes"));
            buf.push('\n');
            done.insert(key, cell);
        }
        if let Some(w) = writer.as_mut() {
            w.write_all(buf.as_bytes())
                .and_then(|_| w.sync_data())
                .map_err(|e| ValidateError::Io(e.to_string()))?;
        }
    }

    let cells = psets
        .iter()
        .map(|p| {
            variants
                .iter()
                .map(|v| done[&(p.set_id.clone(), v.id.clone())].clone())
                .collect()
        })
        .collect();
    Ok(KillMatrix {
        task_id: subject.task_id.clone(),
        set_ids: psets.iter().map(|p| p.set_id.clone()).collect(),
        variants,
        cells,
    })
}

/// Runs the unwoven suite on every candidate and records its status.
/// Returns the mutants that became DEFECTIVE.
pub fn filter_defective_mutants(
    original: &SourceUnit,
    mutants: &mut [Mutant],
    spec: &RunnerSpec,
    workers: usize,
) -> Vec<Mutant> {
    let idx: Vec<usize> = (0..mutants.len())
        .filter(|&i| mutants[i].status == MutantStatus::Candidate)
        .collect();
    for batch in idx.chunks(workers.max(1)) {
        let classes: Vec<PlainClass> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let m = &mutants[i];
                    scope.spawn(move || match m.unit(original) {
                        Ok(unit) => harness::run_plain(&unit, spec).unwrap_or(PlainClass::Crash),
                        Err(_) => PlainClass::Crash,
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("plain-run worker panicked")).collect()
        });
        for (&i, class) in batch.iter().zip(classes) {
            mutants[i].status = match class {
                PlainClass::TestFail => MutantStatus::Defective,
                PlainClass::Pass => MutantStatus::DiscardedPasses,
                PlainClass::Crash | PlainClass::Timeout => MutantStatus::DiscardedCrashes,
            };
        }
    }
    mutants.iter().filter(|m| m.status == MutantStatus::Defective).cloned().collect()
}

pub fn require_min_mutants(mutants: &[Mutant], min_count: usize) -> bool {
    mutants.iter().filter(|m| m.status == MutantStatus::Defective).count() >= min_count
}
