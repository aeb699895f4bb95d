//! Benchmark construction: method filtering, diverse selection, instance
//! packaging and the environment-repair loop.

mod instance;
mod repair;
mod select;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::MethodRecord;
use crate::llmclient::ClientError;

pub use instance::{assemble_instance, load_instance, write_instance, BenchmarkInstance, TestManifest};
pub use repair::{
    default_config_allowlist, environment_repair_loop, parse_file_blocks, repair_prompt, FileEdit, RepairReport,
    RepairRound, DEFAULT_MAX_ROUNDS,
};
pub use select::{
    embed_headers, farthest_first_select, EmbeddingProvider, HttpEmbeddingProvider, TrigramHashProvider,
    FALLBACK_DIMS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("no coverage recorded for {0}")]
    CoverageAbsent(String),
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("cannot select {count} of {population} vectors")]
    CountExceedsPopulation { count: usize, population: usize },
    #[error("only {have} defective mutants, need {need}")]
    TooFewMutants { have: usize, need: usize },
    #[error("instance has no test files")]
    MissingTests,
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error("malformed instance manifest: {0}")]
    Manifest(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Client(#[from] ClientError),
}

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// A method qualifies only with strictly more comment words than this.
    pub min_comment_words: usize,
    pub min_loc: usize,
    pub min_cc: usize,
    pub min_coverage: f64,
    pub min_mutants: usize,
    pub target_count: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            min_comment_words: 15,
            min_loc: 15,
            min_cc: 3,
            min_coverage: 0.90,
            min_mutants: 5,
            target_count: 10,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("min_comment_words", self.min_comment_words),
            ("min_loc", self.min_loc),
            ("min_cc", self.min_cc),
            ("min_mutants", self.min_mutants),
            ("target_count", self.target_count),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(PipelineError::InvalidConfig(format!("{name} must be positive")));
        }
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "min_coverage {} outside (0, 1]",
                self.min_coverage
            )));
        }
        Ok(())
    }

    /// The keep rule for one record; `Err` only when coverage is missing.
    pub fn accepts(&self, r: &MethodRecord) -> Result<bool, PipelineError> {
        let coverage = r.coverage.ok_or_else(|| PipelineError::CoverageAbsent(r.method_id.clone()))?;
        Ok(r.comment_words > self.min_comment_words
            && (r.loc >= self.min_loc || r.cyclomatic >= self.min_cc)
            && coverage >= self.min_coverage)
    }
}

/// Keeps the records passing every threshold, in input order. Records
/// without coverage are skipped with a logged reason.
pub fn filter_candidate_methods(records: &[MethodRecord], cfg: &SelectionConfig) -> Vec<MethodRecord> {
    records
        .iter()
        .filter(|r| match cfg.accepts(r) {
            Ok(keep) => keep,
            Err(e) => {
                tracing::warn!(method = %r.method_id, error = %e, "skipping candidate");
                false
            }
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn record(id: &str, words: usize, loc: usize, cc: usize, cov: Option<f64>) -> MethodRecord {
        MethodRecord {
            method_id: id.into(),
            unit_id: "u".into(),
            unit_path: "u.fx".into(),
            name: id.into(),
            params: vec![],
            signature: format!("fn {id}()"),
            doc_comment: String::new(),
            body_span: 0..0,
            body_lines: (1, 1),
            loc,
            cyclomatic: cc,
            comment_words: words,
            coverage: cov,
            external_refs: vec![],
            spans: vec![],
        }
    }

    fn kept(records: &[MethodRecord], cfg: &SelectionConfig) -> Vec<String> {
        filter_candidate_methods(records, cfg).into_iter().map(|r| r.method_id).collect()
    }

    #[test]
    fn keep_rule_examples() {
        let cfg = SelectionConfig::default();
        let rs = vec![
            record("cc_branch", 16, 14, 3, Some(0.95)),
            record("low_cov", 16, 20, 1, Some(0.89)),
            record("fifteen_words", 15, 40, 9, Some(1.0)),
            record("no_cov", 30, 40, 9, None),
            record("loc_branch", 16, 15, 1, Some(0.90)),
        ];
        assert_eq!(kept(&rs, &cfg), vec!["cc_branch", "loc_branch"]);
    }

    #[test]
    fn config_validation() {
        assert!(SelectionConfig::default().validate().is_ok());
        let bad = SelectionConfig { min_coverage: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SelectionConfig { min_loc: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    fn arb_record() -> impl Strategy<Value = (usize, usize, usize, Option<f64>)> {
        (0usize..30, 0usize..30, 1usize..6, prop::option::weighted(0.9, 0.0f64..=1.0))
    }

    proptest! {
        #[test]
        fn filter_is_ordered_subset_and_monotone(
            rows in prop::collection::vec(arb_record(), 0..30),
            bump in 0usize..4,
        ) {
            let rs: Vec<MethodRecord> = rows
                .iter()
                .enumerate()
                .map(|(i, &(w, l, c, cov))| record(&format!("m{i}"), w, l, c, cov))
                .collect();
            let cfg = SelectionConfig::default();
            let out = kept(&rs, &cfg);
            let mut it = rs.iter().map(|r| r.method_id.clone());
            for id in &out {
                prop_assert!(it.any(|x| &x == id));
            }
            let tighter = SelectionConfig {
                min_comment_words: cfg.min_comment_words + bump,
                min_loc: cfg.min_loc + bump,
                min_cc: cfg.min_cc + bump,
                min_coverage: (cfg.min_coverage + bump as f64 * 0.02).min(1.0),
                ..cfg.clone()
            };
            for id in kept(&rs, &tighter) {
                prop_assert!(out.contains(&id));
            }
        }
    }
}
