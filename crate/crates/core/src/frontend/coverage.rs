//! Normalized line-coverage reports: one `path<TAB>line<TAB>hits` record per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::{FrontendError, MethodRecord};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageTable {
    pub entries: BTreeMap<(String, usize), u64>,
    pub executable_lines: BTreeSet<(String, usize)>,
}

impl CoverageTable {
    pub fn parse(text: &str) -> Result<Self, FrontendError> {
        let mut table = CoverageTable::default();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            if raw.is_empty() {
                continue;
            }
            let mut fields = raw.split('\t');
            let (Some(path), Some(line), Some(hits), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(FrontendError::MalformedReport(lineno));
            };
            let line: usize = line.parse().map_err(|_| FrontendError::MalformedReport(lineno))?;
            let hits: u64 = hits.parse().map_err(|_| FrontendError::MalformedReport(lineno))?;
            if path.is_empty() || line == 0 {
                return Err(FrontendError::MalformedReport(lineno));
            }
            table.record(path, line, hits);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, FrontendError> {
        let text = std::fs::read_to_string(path).map_err(|e| FrontendError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    /// Marks `(path, line)` executable and adds `hits` to its count.
    pub fn record(&mut self, path: &str, line: usize, hits: u64) {
        let key = (path.to_string(), line);
        self.executable_lines.insert(key.clone());
        *self.entries.entry(key).or_insert(0) += hits;
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (path, line) in &self.executable_lines {
            let hits = self.entries.get(&(path.clone(), *line)).copied().unwrap_or(0);
            writeln!(out, "{path}\t{line}\t{hits}").expect("write to string");
        }
        out
    }

    /// Fraction of executable lines inside the method body that were hit.
    pub fn method_coverage(&self, method: &MethodRecord) -> Option<f64> {
        let (first, last) = method.body_lines;
        let mut executable = 0usize;
        let mut covered = 0usize;
        for line in first..=last {
            let key = (method.unit_path.clone(), line);
            if self.executable_lines.contains(&key) {
                executable += 1;
                if self.entries.get(&key).copied().unwrap_or(0) > 0 {
                    covered += 1;
                }
            }
        }
        (executable > 0).then(|| covered as f64 / executable as f64)
    }
}

pub fn ingest_coverage(report_file: &Path, method: &MethodRecord) -> Result<Option<f64>, FrontendError> {
    Ok(CoverageTable::load(report_file)?.method_coverage(method))
}
