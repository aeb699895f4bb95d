//! Corr@k / Comp@k estimation, gap metrics, cross-scheme FDR and ablations.

mod ablation;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mutgen::Scheme;
use crate::validate::KillMatrix;

pub use ablation::{comp_at_1, run_ablation, AblationRow, AblationSpec};

pub const DEFAULT_K_VALUES: [usize; 3] = [1, 3, 5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("k = {k} exceeds n = {n}{}", task.as_deref().map(|t| format!(" for task {t}")).unwrap_or_default())]
    KExceedsN { k: usize, n: usize, task: Option<String> },
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("fraction {0} out of range")]
    FractionOutOfRange(f64),
    #[error("cannot remove {count} of {available} operators")]
    CountExceedsOperators { count: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    pub task_id: String,
    #[serde(default)]
    pub model_tag: String,
    #[serde(default)]
    pub setting: String,
    pub n: usize,
    pub c_corr: usize,
    pub c_comp: usize,
    pub per_sample: Vec<(bool, bool)>,
}

impl SampleStats {
    /// Builds stats from per-sample (correct, complete) flags.
    pub fn from_samples(task_id: impl Into<String>, per_sample: Vec<(bool, bool)>) -> Self {
        debug_assert!(per_sample.iter().all(|&(corr, comp)| corr || !comp));
        SampleStats {
            task_id: task_id.into(),
            model_tag: String::new(),
            setting: String::new(),
            n: per_sample.len(),
            c_corr: per_sample.iter().filter(|s| s.0).count(),
            c_comp: per_sample.iter().filter(|s| s.1).count(),
            per_sample,
        }
    }

    /// Stats with only counts, for callers that never had per-sample flags.
    pub fn from_counts(task_id: impl Into<String>, n: usize, c_corr: usize, c_comp: usize) -> Self {
        assert!(c_comp <= c_corr && c_corr <= n);
        let per_sample = (0..n).map(|i| (i < c_corr, i < c_comp)).collect();
        Self::from_samples(task_id, per_sample)
    }
}

/// 1 − C(n−c, k) / C(n, k), in product form.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, MetricsError> {
    if k == 0 || k > n {
        return Err(MetricsError::KExceedsN { k, n, task: None });
    }
    assert!(c <= n, "c = {c} exceeds n = {n}");
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// Means over tasks of pass@k for correctness and completeness.
pub fn corr_comp_at_k(stats: &[SampleStats], k: usize) -> Result<(f64, f64), MetricsError> {
    if stats.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut corr = 0.0;
    let mut comp = 0.0;
    for s in stats {
        let tag = |e: MetricsError| match e {
            MetricsError::KExceedsN { k, n, .. } => MetricsError::KExceedsN {
                k,
                n,
                task: Some(s.task_id.clone()),
            },
            other => other,
        };
        corr += pass_at_k(s.n, s.c_corr, k).map_err(tag)?;
        comp += pass_at_k(s.n, s.c_comp, k).map_err(tag)?;
    }
    let len = stats.len() as f64;
    Ok((corr / len, comp / len))
}

/// (Δ, ρ): ρ is undefined when corr is zero.
pub fn gap_metrics(corr: f64, comp: f64) -> (f64, Option<f64>) {
    let rho = (corr != 0.0).then(|| comp / corr);
    (corr - comp, rho)
}

pub fn c2c_ratio(stats: &[SampleStats]) -> Option<f64> {
    let corr: usize = stats.iter().map(|s| s.c_corr).sum();
    let comp: usize = stats.iter().map(|s| s.c_comp).sum();
    (corr > 0).then(|| comp as f64 / corr as f64)
}

/// (c_corr − c_comp) / n, excluded (None) when nothing was correct.
pub fn method_level_gap(stats: &SampleStats) -> Option<f64> {
    (stats.c_corr > 0).then(|| (stats.c_corr - stats.c_comp) as f64 / stats.n as f64)
}

/// Among sets that are correct and kill every `s` mutant, the fraction that
/// leave some mutant of the other scheme alive.
pub fn cross_scheme_fdr(matrices: &[KillMatrix], s: Scheme) -> Option<f64> {
    let mut complete_s = 0usize;
    let mut fail_other = 0usize;
    for m in matrices {
        let s_cols: Vec<usize> = (1..m.variants.len()).filter(|&j| m.variants[j].scheme == Some(s)).collect();
        let other_cols: Vec<usize> = (1..m.variants.len())
            .filter(|&j| matches!(m.variants[j].scheme, Some(x) if x != s))
            .collect();
        if s_cols.is_empty() || other_cols.is_empty() {
            continue;
        }
        for row in &m.cells {
            if row[0].value == 1 && s_cols.iter().all(|&j| row[j].value == 0) {
                complete_s += 1;
                if other_cols.iter().any(|&j| row[j].value != 0) {
                    fail_other += 1;
                }
            }
        }
    }
    (complete_s > 0).then(|| fail_other as f64 / complete_s as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k_values: Vec<usize>,
    /// Only k values no larger than every task's n appear in these maps.
    pub corr_at: BTreeMap<usize, f64>,
    pub comp_at: BTreeMap<usize, f64>,
    pub delta_at: BTreeMap<usize, f64>,
    pub rho_at: BTreeMap<usize, Option<f64>>,
    pub c2c: Option<f64>,
    pub per_method_gap: BTreeMap<String, Option<f64>>,
    pub fdr: Option<f64>,
    pub ablation_rows: Vec<AblationRow>,
}

pub fn metric_report(stats: &[SampleStats], k_values: &[usize]) -> MetricReport {
    let mut report = MetricReport {
        k_values: k_values.to_vec(),
        corr_at: BTreeMap::new(),
        comp_at: BTreeMap::new(),
        delta_at: BTreeMap::new(),
        rho_at: BTreeMap::new(),
        c2c: c2c_ratio(stats),
        per_method_gap: stats.iter().map(|s| (s.task_id.clone(), method_level_gap(s))).collect(),
        fdr: None,
        ablation_rows: Vec::new(),
    };
    for &k in k_values {
        if let Ok((corr, comp)) = corr_comp_at_k(stats, k) {
            let (delta, rho) = gap_metrics(corr, comp);
            report.corr_at.insert(k, corr);
            report.comp_at.insert(k, comp);
            report.delta_at.insert(k, delta);
            report.rho_at.insert(k, rho);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::OutcomeKind;
    use crate::validate::{Cell, VariantInfo};
    use proptest::prelude::*;

    #[test]
    fn pass_at_k_examples() {
        assert_eq!(pass_at_k(5, 0, 3).unwrap(), 0.0);
        assert!((pass_at_k(5, 2, 1).unwrap() - 0.4).abs() < 1e-12);
        assert!((pass_at_k(5, 2, 3).unwrap() - 0.9).abs() < 1e-12);
        assert!(matches!(pass_at_k(3, 1, 4), Err(MetricsError::KExceedsN { .. })));
    }

    #[test]
    fn corr_comp_examples() {
        let s = vec![SampleStats::from_counts("a", 5, 5, 0), SampleStats::from_counts("b", 5, 0, 0)];
        let (corr, comp) = corr_comp_at_k(&s, 1).unwrap();
        assert_eq!((corr, comp), (0.5, 0.0));
        let (corr, _) = corr_comp_at_k(&[SampleStats::from_counts("a", 5, 2, 0)], 3).unwrap();
        assert!((corr - 0.9).abs() < 1e-12);
        let err = corr_comp_at_k(&[SampleStats::from_counts("t9", 2, 1, 0)], 3).unwrap_err();
        assert_eq!(err, MetricsError::KExceedsN { k: 3, n: 2, task: Some("t9".into()) });
    }

    #[test]
    fn gaps_and_ratios() {
        assert_eq!(gap_metrics(0.0, 0.0), (0.0, None));
        assert_eq!(c2c_ratio(&[SampleStats::from_counts("a", 20, 12, 3)]), Some(0.25));
        assert_eq!(c2c_ratio(&[SampleStats::from_counts("a", 5, 0, 0)]), None);
        assert_eq!(method_level_gap(&SampleStats::from_counts("a", 5, 4, 1)), Some(0.6));
        assert_eq!(method_level_gap(&SampleStats::from_counts("a", 5, 0, 0)), None);
        assert_eq!(method_level_gap(&SampleStats::from_counts("a", 5, 5, 5)), Some(0.0));
    }

    fn cell(v: i8) -> Cell {
        let kind = match v {
            1 => OutcomeKind::AllPass,
            0 => OutcomeKind::Violation,
            _ => OutcomeKind::TestFail,
        };
        Cell {
            value: v,
            kind,
            violated: vec![],
            ms: 0,
        }
    }

    fn matrix(schemes: &[Scheme], rows: &[Vec<i8>]) -> KillMatrix {
        let mut variants = vec![VariantInfo {
            id: "original".into(),
            scheme: None,
            operator: None,
        }];
        for (i, s) in schemes.iter().enumerate() {
            variants.push(VariantInfo {
                id: format!("m{i}"),
                scheme: Some(*s),
                operator: None,
            });
        }
        KillMatrix {
            task_id: "t".into(),
            set_ids: (0..rows.len()).map(|i| format!("s{i}")).collect(),
            variants,
            cells: rows.iter().map(|r| r.iter().map(|&v| cell(v)).collect()).collect(),
        }
    }

    #[test]
    fn fdr_counts() {
        use Scheme::*;
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(vec![1, 0, 0, if i < 2 { 1 } else { 0 }]);
        }
        rows.push(vec![1, 1, 0, 0]);
        rows.push(vec![0, 0, 0, 0]);
        let m = matrix(&[Operator, Operator, Llm], &rows);
        assert_eq!(cross_scheme_fdr(&[m.clone()], Operator), Some(0.2));
        let none_complete = matrix(&[Operator, Llm], &[vec![1, 1, 0]]);
        assert_eq!(cross_scheme_fdr(&[none_complete], Operator), None);
        let one_scheme = matrix(&[Operator], &[vec![1, 0]]);
        assert_eq!(cross_scheme_fdr(&[one_scheme], Operator), None);
        assert_eq!(cross_scheme_fdr(&[], Llm), None);
    }

    fn choose(n: usize, k: usize) -> usize {
        if k > n {
            return 0;
        }
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    proptest! {
        #[test]
        fn pass_at_k_monotone(n in 1usize..40, c in 0usize..40, k in 1usize..40) {
            let c = c.min(n);
            let k = k.min(n);
            let v = pass_at_k(n, c, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            if k < n { prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= v - 1e-12); }
            if c < n { prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= v - 1e-12); }
            prop_assert!((pass_at_k(n, c, 1).unwrap() - c as f64 / n as f64).abs() < 1e-12);
            if c >= 1 { prop_assert_eq!(pass_at_k(n, c, n).unwrap(), 1.0); }
        }

        #[test]
        fn pass_at_k_matches_binomial_ratio(n in 1usize..30, c in 0usize..30, k in 1usize..30) {
            let c = c.min(n);
            let k = k.min(n);
            let exact = 1.0 - choose(n - c, k) as f64 / choose(n, k) as f64;
            prop_assert!((pass_at_k(n, c, k).unwrap() - exact).abs() < 1e-9);
        }

        #[test]
        fn corr_dominates_comp(counts in prop::collection::vec((1usize..8, 0usize..8, 0usize..8), 1..6), k in 1usize..8) {
            let stats: Vec<SampleStats> = counts.iter().enumerate().map(|(i, &(n, a, b))| {
                let corr = a.min(n);
                SampleStats::from_counts(format!("t{i}"), n.max(k), corr, b.min(corr))
            }).collect();
            let (corr, comp) = corr_comp_at_k(&stats, k).unwrap();
            prop_assert!(corr >= comp);
        }
    }

    #[test]
    fn report_skips_infeasible_k() {
        let r = metric_report(&[SampleStats::from_counts("a", 3, 3, 3)], &DEFAULT_K_VALUES);
        assert_eq!(r.corr_at.keys().copied().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(r.rho_at[&1], Some(1.0));
        assert_eq!(r.delta_at[&3], 0.0);
    }
}
