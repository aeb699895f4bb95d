//! Comp@1 under mutant-set ablations.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::mutgen::Scheme;
use crate::validate::KillMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AblationSpec {
    OperatorExclude { name: String },
    SchemeExclude { scheme: Scheme },
    Budget { fraction: f64, trials: usize },
    RandomOperatorRemoval { count: usize, trials: usize },
    RandomLlmRemoval { fraction: f64, trials: usize },
}

impl AblationSpec {
    pub fn label(&self) -> String {
        match self {
            AblationSpec::OperatorExclude { name } => format!("operator_exclude:{name}"),
            AblationSpec::SchemeExclude { scheme } => {
                let s = serde_json::to_value(scheme).expect("scheme serializes");
                format!("scheme_exclude:{}", s.as_str().unwrap_or_default())
            }
            AblationSpec::Budget { fraction, .. } => format!("budget:{fraction:.2}"),
            AblationSpec::RandomOperatorRemoval { count, .. } => format!("random_operator_removal:{count}"),
            AblationSpec::RandomLlmRemoval { fraction, .. } => format!("random_llm_removal:{fraction:.2}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mean: f64,
    /// Population standard deviation over trials.
    pub std: f64,
    pub trials: usize,
    pub values: Vec<f64>,
}

/// Mean over tasks of the fraction of sets that are complete.
pub fn comp_at_1(matrices: &[KillMatrix]) -> f64 {
    let rates: Vec<f64> = matrices
        .iter()
        .filter(|m| !m.set_ids.is_empty())
        .map(|m| {
            let complete = m.verdicts().iter().filter(|v| v.complete).count();
            complete as f64 / m.set_ids.len() as f64
        })
        .collect();
    if rates.is_empty() {
        0.0
    } else {
        rates.iter().sum::<f64>() / rates.len() as f64
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor() as usize
}

fn check_fraction(f: f64, allow_zero: bool) -> Result<(), MetricsError> {
    let ok = f.is_finite() && f <= 1.0 && if allow_zero { f >= 0.0 } else { f > 0.0 };
    if ok {
        Ok(())
    } else {
        Err(MetricsError::FractionOutOfRange(f))
    }
}

/// Keeps the mutant columns whose (1-based) index is in `keep`.
fn keep_columns(m: &KillMatrix, keep: &BTreeSet<usize>) -> KillMatrix {
    m.restrict(|j, _| keep.contains(&j))
}

fn mutant_cols(m: &KillMatrix, pred: impl Fn(usize) -> bool) -> Vec<usize> {
    (1..m.variants.len()).filter(|&j| pred(j)).collect()
}

fn stats(label: String, values: Vec<f64>) -> AblationRow {
    let t = values.len() as f64;
    let mean = values.iter().sum::<f64>() / t;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
    AblationRow {
        label,
        mean,
        std: var.sqrt(),
        trials: values.len(),
        values,
    }
}

/// Operator names appearing in the matrices, sorted.
fn operator_universe(matrices: &[KillMatrix]) -> Vec<String> {
    let set: BTreeSet<String> = matrices
        .iter()
        .flat_map(|m| m.variants.iter().filter_map(|v| v.operator.clone()))
        .collect();
    set.into_iter().collect()
}

/// Recomputes Comp@1 under `spec`. Randomized variants draw trial `t` from a
/// ChaCha stream seeded with `seed + t`.
pub fn run_ablation(matrices: &[KillMatrix], spec: &AblationSpec, seed: u64) -> Result<AblationRow, MetricsError> {
    let label = spec.label();
    match spec {
        AblationSpec::OperatorExclude { name } => {
            if !operator_universe(matrices).contains(name) {
                return Err(MetricsError::UnknownOperator(name.clone()));
            }
            let reduced: Vec<KillMatrix> = matrices
                .iter()
                .map(|m| m.restrict(|_, v| v.operator.as_deref() != Some(name)))
                .collect();
            Ok(stats(label, vec![comp_at_1(&reduced)]))
        }
        AblationSpec::SchemeExclude { scheme } => {
            let reduced: Vec<KillMatrix> = matrices.iter().map(|m| m.restrict(|_, v| v.scheme != Some(*scheme))).collect();
            Ok(stats(label, vec![comp_at_1(&reduced)]))
        }
        AblationSpec::Budget { fraction, trials } => {
            check_fraction(*fraction, false)?;
            let values = (0..(*trials).max(1))
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
                    let reduced: Vec<KillMatrix> = matrices
                        .iter()
                        .map(|m| {
                            let total = m.variants.len() - 1;
                            if total == 0 {
                                return m.clone();
                            }
                            let size = round_half_up(fraction * total as f64).clamp(1, total);
                            let keep: BTreeSet<usize> = sample(&mut rng, total, size).into_iter().map(|i| i + 1).collect();
                            keep_columns(m, &keep)
                        })
                        .collect();
                    comp_at_1(&reduced)
                })
                .collect();
            Ok(stats(label, values))
        }
        AblationSpec::RandomOperatorRemoval { count, trials } => {
            let universe = operator_universe(matrices);
            if *count > universe.len() {
                return Err(MetricsError::CountExceedsOperators {
                    count: *count,
                    available: universe.len(),
                });
            }
            let values = (0..(*trials).max(1))
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
                    let removed: BTreeSet<&str> = sample(&mut rng, universe.len(), *count)
                        .into_iter()
                        .map(|i| universe[i].as_str())
                        .collect();
                    let reduced: Vec<KillMatrix> = matrices
                        .iter()
                        .map(|m| m.restrict(|_, v| !v.operator.as_deref().is_some_and(|o| removed.contains(o))))
                        .collect();
                    comp_at_1(&reduced)
                })
                .collect();
            Ok(stats(label, values))
        }
        AblationSpec::RandomLlmRemoval { fraction, trials } => {
            check_fraction(*fraction, true)?;
            let values = (0..(*trials).max(1))
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
                    let reduced: Vec<KillMatrix> = matrices
                        .iter()
                        .map(|m| {
                            let llm = mutant_cols(m, |j| m.variants[j].scheme == Some(Scheme::Llm));
                            let drop = round_half_up(fraction * llm.len() as f64).min(llm.len());
                            let dropped: BTreeSet<usize> =
                                sample(&mut rng, llm.len(), drop).into_iter().map(|i| llm[i]).collect();
                            let keep: BTreeSet<usize> = mutant_cols(m, |j| !dropped.contains(&j)).into_iter().collect();
                            keep_columns(m, &keep)
                        })
                        .collect();
                    comp_at_1(&reduced)
                })
                .collect();
            Ok(stats(label, values))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::OutcomeKind;
    use crate::validate::{Cell, VariantInfo};

    fn cell(v: i8) -> Cell {
        Cell {
            value: v,
            kind: if v == 1 { OutcomeKind::AllPass } else { OutcomeKind::Violation },
            violated: vec![],
            ms: 0,
        }
    }

    fn matrix(cols: &[(Scheme, &str)], rows: &[Vec<i8>]) -> KillMatrix {
        let mut variants = vec![VariantInfo {
            id: "original".into(),
            scheme: None,
            operator: None,
        }];
        for (i, (s, op)) in cols.iter().enumerate() {
            variants.push(VariantInfo {
                id: format!("m{i}"),
                scheme: Some(*s),
                operator: (!op.is_empty()).then(|| op.to_string()),
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
    fn round_half_up_boundaries() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(0.7 * 5.0), 4);
        assert_eq!(round_half_up(2.49), 2);
    }

    #[test]
    fn full_budget_is_baseline() {
        let m = matrix(&[(Scheme::Operator, "a"), (Scheme::Operator, "b")], &[vec![1, 0, 1], vec![1, 0, 0]]);
        let row = run_ablation(&[m.clone()], &AblationSpec::Budget { fraction: 1.0, trials: 7 }, 3).unwrap();
        assert_eq!(row.mean, comp_at_1(&[m]));
        assert_eq!(row.std, 0.0);
    }

    #[test]
    fn errors() {
        let m = matrix(&[(Scheme::Operator, "a")], &[vec![1, 0]]);
        assert!(matches!(
            run_ablation(&[m.clone()], &AblationSpec::OperatorExclude { name: "zz".into() }, 0),
            Err(MetricsError::UnknownOperator(_))
        ));
        assert!(matches!(
            run_ablation(&[m.clone()], &AblationSpec::Budget { fraction: 1.5, trials: 1 }, 0),
            Err(MetricsError::FractionOutOfRange(_))
        ));
        assert!(matches!(
            run_ablation(&[m], &AblationSpec::RandomOperatorRemoval { count: 2, trials: 1 }, 0),
            Err(MetricsError::CountExceedsOperators { .. })
        ));
    }

    #[test]
    fn same_seed_same_row() {
        let m = matrix(
            &[(Scheme::Operator, "a"), (Scheme::Operator, "b"), (Scheme::Llm, ""), (Scheme::Llm, "")],
            &[vec![1, 0, 1, 0, 0], vec![1, 0, 0, 1, 0], vec![1, 0, 0, 0, 0]],
        );
        for spec in [
            AblationSpec::Budget { fraction: 0.5, trials: 20 },
            AblationSpec::RandomOperatorRemoval { count: 1, trials: 20 },
            AblationSpec::RandomLlmRemoval { fraction: 0.5, trials: 20 },
        ] {
            let a = run_ablation(&[m.clone()], &spec, 42).unwrap();
            let b = run_ablation(&[m.clone()], &spec, 42).unwrap();
            assert_eq!(a, b);
            assert!(a.mean >= comp_at_1(&[m.clone()]));
        }
    }
}
