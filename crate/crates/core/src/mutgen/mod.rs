//! Operator-based and LLM-based mutant generation.

mod diff;
mod llm;

use std::collections::{BTreeSet, HashSet};
use std::ops::Range;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{LabeledSpan, MethodRecord, SourceUnit, SpanKind};
use crate::llmclient::ClientError;

pub use diff::{apply_unified_diff, unified_diff};
pub use llm::{generate_llm_mutants, llm_prompt, select_llm_mutation_targets, PLACEHOLDER};

pub const FIXTURE_CATALOG: &str = include_str!("../../catalogs/catalog.fixture.json");
pub const PYTHON_CATALOG: &str = include_str!("../../catalogs/catalog.python-like.json");
pub const JAVA_CATALOG: &str = include_str!("../../catalogs/catalog.java-like.json");

/// Replacement directive: the numeric payload plus one.
const INCREMENT: &str = "@increment";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MutgenError {
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("mutant {0} does not parse")]
    UnparseableResult(String),
    #[error("site does not match operator `{0}`")]
    SiteMismatch(String),
    #[error("client error at line {line}: {source}")]
    Client { line: usize, source: ClientError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub pattern: String,
    pub replacement: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MutationOperator {
    pub name: String,
    pub site_kinds: BTreeSet<SpanKind>,
    pub rules: Vec<Rule>,
    #[serde(skip)]
    compiled: Vec<Regex>,
}

impl PartialEq for MutationOperator {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.site_kinds == other.site_kinds && self.rules == other.rules
    }
}

impl MutationOperator {
    pub fn new(name: &str, site_kinds: &[SpanKind], rules: &[(&str, &str)]) -> Result<Self, MutgenError> {
        let mut op = MutationOperator {
            name: name.to_string(),
            site_kinds: site_kinds.iter().copied().collect(),
            rules: rules
                .iter()
                .map(|(p, r)| Rule {
                    pattern: p.to_string(),
                    replacement: r.to_string(),
                })
                .collect(),
            compiled: Vec::new(),
        };
        op.compile()?;
        Ok(op)
    }

    fn compile(&mut self) -> Result<(), MutgenError> {
        self.compiled = self
            .rules
            .iter()
            .map(|r| {
                if r.pattern.is_empty() {
                    return Err(MutgenError::InvalidCatalog(format!("{}: empty pattern", self.name)));
                }
                Regex::new(&format!("^(?s:{})$", r.pattern))
                    .map_err(|e| MutgenError::InvalidCatalog(format!("{}: {e}", self.name)))
            })
            .collect::<Result<_, _>>()?;
        Ok(())
    }

    /// Rewrites `payload` with the first rule whose pattern matches it in full.
    /// Identity rewrites count as no match.
    pub fn rewrite(&self, payload: &str) -> Option<String> {
        for (rule, re) in self.rules.iter().zip(&self.compiled) {
            let Some(caps) = re.captures(payload) else { continue };
            let out = if rule.replacement == INCREMENT {
                match payload.parse::<i64>().ok().and_then(|n| n.checked_add(1)) {
                    Some(n) => n.to_string(),
                    None => continue,
                }
            } else {
                let mut s = String::new();
                caps.expand(&rule.replacement, &mut s);
                s
            };
            return (out != payload).then_some(out);
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub operators: Vec<MutationOperator>,
}

impl Catalog {
    pub fn from_json(text: &str) -> Result<Self, MutgenError> {
        let mut operators: Vec<MutationOperator> =
            serde_json::from_str(text).map_err(|e| MutgenError::InvalidCatalog(e.to_string()))?;
        let mut seen = HashSet::new();
        for op in &mut operators {
            if !seen.insert(op.name.clone()) {
                return Err(MutgenError::InvalidCatalog(format!("duplicate operator `{}`", op.name)));
            }
            op.compile()?;
        }
        Ok(Catalog { operators })
    }

    pub fn load(path: &Path) -> Result<Self, MutgenError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MutgenError::InvalidCatalog(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn is_bundled(name: &str) -> bool {
        matches!(name, "fixture" | "python-like" | "java-like")
    }

    /// One of the bundled catalogs: `fixture`, `python-like` or `java-like`.
    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "fixture" => FIXTURE_CATALOG,
            "python-like" => PYTHON_CATALOG,
            "java-like" => JAVA_CATALOG,
            _ => return None,
        };
        Some(Self::from_json(text).expect("bundled catalogs are valid"))
    }

    pub fn get(&self, name: &str) -> Result<&MutationOperator, MutgenError> {
        self.operators
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| MutgenError::UnknownOperator(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.operators.iter().map(|o| o.name.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scheme {
    Operator,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MutantStatus {
    Candidate,
    Defective,
    DiscardedPasses,
    DiscardedCrashes,
    DiscardedDuplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutant {
    pub mutant_id: String,
    pub method_id: String,
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_name: Option<String>,
    pub span: Range<usize>,
    pub line: usize,
    pub original_payload: String,
    pub replacement: String,
    pub rendered_text: String,
    pub status: MutantStatus,
}

impl Mutant {
    /// The mutated unit, re-parsed.
    pub fn unit(&self, original: &SourceUnit) -> Result<SourceUnit, MutgenError> {
        original
            .with_text(self.rendered_text.clone())
            .map_err(|_| MutgenError::UnparseableResult(self.mutant_id.clone()))
    }

    pub fn diff(&self, original: &SourceUnit) -> String {
        unified_diff(&original.path, &original.text, &self.rendered_text)
    }
}

pub(crate) fn splice(text: &str, span: Range<usize>, replacement: &str) -> String {
    let mut out = String::with_capacity(text.len() + replacement.len());
    out.push_str(&text[..span.start]);
    out.push_str(replacement);
    out.push_str(&text[span.end..]);
    out
}

/// Spans of the method that `operator` can rewrite, in source order.
pub fn enumerate_sites(method: &MethodRecord, operator: &MutationOperator) -> Vec<LabeledSpan> {
    method
        .spans
        .iter()
        .filter(|s| operator.site_kinds.contains(&s.kind) && operator.rewrite(&s.payload).is_some())
        .cloned()
        .collect()
}

pub fn apply_operator_mutation(
    unit: &SourceUnit,
    method: &MethodRecord,
    operator: &MutationOperator,
    site: &LabeledSpan,
) -> Result<Mutant, MutgenError> {
    let replacement = operator
        .rewrite(&site.payload)
        .ok_or_else(|| MutgenError::SiteMismatch(operator.name.clone()))?;
    let rendered_text = splice(&unit.text, site.range(), &replacement);
    let mutant_id = format!("{}-{}-{}", method.name, operator.name, site.byte_start);
    if unit.with_text(rendered_text.clone()).is_err() {
        tracing::info!(mutant = %mutant_id, "dropping unparseable mutant");
        return Err(MutgenError::UnparseableResult(mutant_id));
    }
    Ok(Mutant {
        mutant_id,
        method_id: method.method_id.clone(),
        scheme: Scheme::Operator,
        operator_name: Some(operator.name.clone()),
        span: site.range(),
        line: site.line,
        original_payload: site.payload.clone(),
        replacement,
        rendered_text,
        status: MutantStatus::Candidate,
    })
}

/// All single-site operator mutants, ordered by (operator name, byte offset).
/// Later mutants whose text repeats an earlier one are marked duplicates.
pub fn generate_operator_mutants(unit: &SourceUnit, method: &MethodRecord, catalog: &Catalog) -> Vec<Mutant> {
    let mut ops: Vec<&MutationOperator> = catalog.operators.iter().collect();
    ops.sort_by(|a, b| a.name.cmp(&b.name));
    let mut mutants = Vec::new();
    for op in ops {
        for site in enumerate_sites(method, op) {
            match apply_operator_mutation(unit, method, op, &site) {
                Ok(m) => mutants.push(m),
                Err(e) => tracing::info!("{e}"),
            }
        }
    }
    mark_duplicates(&mut mutants);
    mutants
}

pub(crate) fn mark_duplicates(mutants: &mut [Mutant]) {
    let mut seen = HashSet::new();
    for m in mutants.iter_mut() {
        if !seen.insert(m.rendered_text.clone()) {
            m.status = MutantStatus::DiscardedDuplicate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{find_method, parse_unit, FIXTURE_ADAPTER};

    fn method(src: &str, name: &str) -> (SourceUnit, MethodRecord) {
        let u = parse_unit("u", "u.fx", src, FIXTURE_ADAPTER).unwrap();
        let m = find_method(&u, name).unwrap();
        (u, m)
    }

    fn fixture() -> Catalog {
        Catalog::bundled("fixture").unwrap()
    }

    #[test]
    fn bundled_catalogs_load_with_expected_names() {
        let py = Catalog::bundled("python-like").unwrap();
        let java = Catalog::bundled("java-like").unwrap();
        assert_eq!(py.operators.len(), 11);
        assert_eq!(java.operators.len(), 11);
        let mut names: Vec<String> = py.names();
        names.extend(java.names());
        let fx: BTreeSet<String> = fixture().names().into_iter().collect();
        assert_eq!(fx, names.into_iter().collect());
    }

    #[test]
    fn conditionals_boundary_sites() {
        let (_, m) = method("fn f(a, b, x, y) { if (a < b) { return x >= y; } return false; }", "f");
        let op = fixture().get("conditionals_boundary").unwrap().clone();
        let sites = enumerate_sites(&m, &op);
        assert_eq!(sites.iter().map(|s| s.payload.as_str()).collect::<Vec<_>>(), vec!["<", ">="]);
    }

    #[test]
    fn spec_rewrites() {
        let cat = fixture();
        assert_eq!(cat.get("conditionals_boundary").unwrap().rewrite("<").as_deref(), Some("<="));
        assert_eq!(cat.get("augassign_to_assign").unwrap().rewrite("i += 1").as_deref(), Some("i = 1"));
        assert_eq!(cat.get("numeric_increments").unwrap().rewrite("5").as_deref(), Some("6"));
        assert_eq!(cat.get("assignment_nullification").unwrap().rewrite("null"), None);
        assert_eq!(cat.get("keyword_rewrite").unwrap().rewrite("break").as_deref(), Some("continue"));
        assert_eq!(cat.get("arg_removal").unwrap().rewrite(", x").as_deref(), Some(""));
        assert_eq!(cat.get("string_perturbation").unwrap().rewrite("\"ab\"").as_deref(), Some("\"XXabXX\""));
    }

    #[test]
    fn augassign_site_and_mutant() {
        let (u, m) = method("fn f(n) { let i = 0; i += 1; return i; }", "f");
        let op = fixture().get("augassign_to_assign").unwrap().clone();
        let sites = enumerate_sites(&m, &op);
        assert_eq!(sites.len(), 1);
        let mutant = apply_operator_mutation(&u, &m, &op, &sites[0]).unwrap();
        assert_eq!(mutant.rendered_text, "fn f(n) { let i = 0; i = 1; return i; }");
        assert_eq!(mutant.status, MutantStatus::Candidate);
        assert_eq!(mutant.mutant_id, "f-augassign_to_assign-21");
    }

    #[test]
    fn rules_never_invert_themselves() {
        for name in ["fixture", "python-like", "java-like"] {
            for op in Catalog::bundled(name).unwrap().operators {
                for rule in &op.rules {
                    let single = MutationOperator::new("r", &[], &[(&rule.pattern, &rule.replacement)]).unwrap();
                    for sample in ["<", "<=", "+", "-", "==", "true", "1", "i += 1", "x", "\"s\"", "break", "a && b"] {
                        if let Some(once) = single.rewrite(sample) {
                            assert_ne!(single.rewrite(&once).as_deref(), Some(sample), "{} {:?}", op.name, rule);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn duplicate_rewrites_collapse() {
        // `<` -> `<=` under conditionals_boundary and operator_replacement.
        let (u, m) = method("fn f(a, b) { return a < b; }", "f");
        let cat = Catalog {
            operators: vec![
                fixture().get("operator_replacement").unwrap().clone(),
                fixture().get("conditionals_boundary").unwrap().clone(),
            ],
        };
        let ms = generate_operator_mutants(&u, &m, &cat);
        let relevant: Vec<_> = ms.iter().filter(|m| m.replacement == "<=").collect();
        assert_eq!(relevant.len(), 2);
        assert_eq!(relevant[0].operator_name.as_deref(), Some("conditionals_boundary"));
        assert_eq!(relevant[0].status, MutantStatus::Candidate);
        assert_eq!(relevant[1].status, MutantStatus::DiscardedDuplicate);
    }

    #[test]
    fn empty_catalog_yields_nothing() {
        let (u, m) = method("fn f(a, b) { return a < b; }", "f");
        assert!(generate_operator_mutants(&u, &m, &Catalog { operators: vec![] }).is_empty());
    }

    #[test]
    fn unknown_operator() {
        assert_eq!(fixture().get("nope").unwrap_err(), MutgenError::UnknownOperator("nope".into()));
    }

    #[test]
    fn unparseable_rewrites_are_dropped() {
        let (u, m) = method("fn f(a) { return -a; }", "f");
        let op = MutationOperator::new("bad", &[SpanKind::UnaryOp], &[("-", "*")]).unwrap();
        let site = enumerate_sites(&m, &op).remove(0);
        assert!(matches!(apply_operator_mutation(&u, &m, &op, &site), Err(MutgenError::UnparseableResult(_))));
    }
}
