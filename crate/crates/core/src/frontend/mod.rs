//! Subject-language frontend: parsing, method extraction and the static
//! metrics used to filter candidate methods.
//!
//! The only bundled adapter is `fixture`, a small imperative language with
//! integers, booleans, strings, lists, records, functions, `if`/`while`/`for`,
//! `return` and `assert`. Test cases are `test name { ... }` items.

pub mod ast;
pub mod coverage;
pub mod lexer;
pub mod parser;
mod spans;

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coverage::{ingest_coverage, CoverageTable};
pub(crate) use spans::{line_of, line_starts};

pub const FIXTURE_ADAPTER: &str = "fixture";

/// Names provided by the fixture runtime. These form the default allowlist
/// for standalone classification.
pub const FIXTURE_BUILTINS: &[&str] = &[
    "len", "push", "pop", "range", "str", "int", "abs", "min", "max", "sum", "contains",
    "slice", "sorted", "reverse", "keys", "has", "type_of", "is_int", "is_str", "is_bool",
    "is_list", "is_record", "upper", "lower", "trim", "snapshot", "ensure", "print",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrontendError {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown adapter `{0}`")]
    UnknownAdapter(String),
    #[error("malformed coverage report at line {0}")]
    MalformedReport(usize),
    #[error("io error: {0}")]
    Io(String),
}

impl FrontendError {
    pub(crate) fn syntax(line: usize, message: impl Into<String>) -> Self {
        FrontendError::Syntax {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SpanKind {
    BinaryOp,
    UnaryOp,
    NumericLiteral,
    StringLiteral,
    BooleanLiteral,
    ReturnExpr,
    Condition,
    LoopHeader,
    Call,
    CallArg,
    AugAssign,
    AssignRhs,
    VoidCallStmt,
    KeywordStmt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub kind: SpanKind,
    pub byte_start: usize,
    pub byte_end: usize,
    pub line: usize,
    pub payload: String,
}

impl LabeledSpan {
    pub fn range(&self) -> Range<usize> {
        self.byte_start..self.byte_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceUnit {
    pub unit_id: String,
    pub path: String,
    pub text: String,
    pub adapter_id: String,
    pub spans: Vec<LabeledSpan>,
}

impl SourceUnit {
    /// Returns a copy of this unit with new text, re-parsed under the same adapter.
    pub fn with_text(&self, text: String) -> Result<SourceUnit, FrontendError> {
        parse_unit(&self.unit_id, &self.path, text, &self.adapter_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method_id: String,
    pub unit_id: String,
    pub unit_path: String,
    pub name: String,
    pub params: Vec<String>,
    pub signature: String,
    pub doc_comment: String,
    pub body_span: Range<usize>,
    /// First and last source line of the body, inclusive.
    pub body_lines: (usize, usize),
    pub loc: usize,
    pub cyclomatic: usize,
    pub comment_words: usize,
    pub coverage: Option<f64>,
    pub external_refs: Vec<String>,
    pub spans: Vec<LabeledSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DependencyClass {
    Standalone,
    Dependent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LocBucket {
    Short,
    Medium,
    Long,
}

fn check_adapter(adapter_id: &str) -> Result<(), FrontendError> {
    if adapter_id == FIXTURE_ADAPTER {
        Ok(())
    } else {
        Err(FrontendError::UnknownAdapter(adapter_id.to_string()))
    }
}

/// Parses `text` under the named adapter and materializes its labelled spans.
pub fn parse_unit(
    unit_id: &str,
    path: &str,
    text: impl Into<String>,
    adapter_id: &str,
) -> Result<SourceUnit, FrontendError> {
    check_adapter(adapter_id)?;
    let text = text.into();
    let program = parser::parse_program(&text)?;
    let spans = spans::label_program(&text, &program);
    Ok(SourceUnit {
        unit_id: unit_id.to_string(),
        path: path.to_string(),
        text,
        adapter_id: adapter_id.to_string(),
        spans,
    })
}

/// Checks that `text` parses as a single expression under the adapter.
pub fn check_expression(text: &str, adapter_id: &str) -> Result<(), FrontendError> {
    check_adapter(adapter_id)?;
    parser::parse_expr(text).map(|_| ())
}

/// One record per `fn` item, in declaration order.
pub fn extract_methods(unit: &SourceUnit) -> Vec<MethodRecord> {
    let Ok(program) = parser::parse_program(&unit.text) else {
        return Vec::new();
    };
    let starts = line_starts(&unit.text);
    program
        .functions()
        .map(|item| {
            let body = item.body.span.clone();
            let spans: Vec<LabeledSpan> = unit
                .spans
                .iter()
                .filter(|s| s.byte_start >= body.start && s.byte_end <= body.end)
                .cloned()
                .collect();
            let doc_comment = item
                .doc_span
                .clone()
                .map(|r| unit.text[r].to_string())
                .unwrap_or_default();
            let mut record = MethodRecord {
                method_id: format!("{}::{}", unit.unit_id, item.name),
                unit_id: unit.unit_id.clone(),
                unit_path: unit.path.clone(),
                name: item.name.clone(),
                params: item.params.clone(),
                signature: unit.text[item.sig_span.clone()].to_string(),
                comment_words: count_words(&doc_comment),
                doc_comment,
                body_lines: (
                    line_of(&starts, body.start),
                    line_of(&starts, body.end.saturating_sub(1)),
                ),
                loc: count_loc(&unit.text[body.start + 1..body.end - 1]),
                body_span: body,
                cyclomatic: 1,
                coverage: None,
                external_refs: external_refs(item),
                spans,
            };
            record.cyclomatic = cyclomatic_complexity(&record);
            record
        })
        .collect()
}

/// Finds a method by name in a unit.
pub fn find_method(unit: &SourceUnit, name: &str) -> Option<MethodRecord> {
    extract_methods(unit).into_iter().find(|m| m.name == name)
}

fn count_loc(body_inner: &str) -> usize {
    body_inner
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("//"))
        .count()
}

fn count_words(comment: &str) -> usize {
    comment
        .split_whitespace()
        .filter(|tok| tok.bytes().any(|b| b.is_ascii_alphabetic()))
        .count()
}

fn external_refs(item: &ast::Item) -> Vec<String> {
    fn expr(e: &ast::Expr, out: &mut Vec<String>) {
        use ast::ExprKind::*;
        match &e.kind {
            Call { callee, args } => {
                if !out.contains(callee) {
                    out.push(callee.clone());
                }
                args.iter().for_each(|a| expr(a, out));
            }
            List(xs) => xs.iter().for_each(|a| expr(a, out)),
            Record(fs) => fs.iter().for_each(|(_, a)| expr(a, out)),
            Unary { operand, .. } => expr(operand, out),
            Binary { lhs, rhs, .. } => {
                expr(lhs, out);
                expr(rhs, out);
            }
            Field { base, .. } => expr(base, out),
            Index { base, index } => {
                expr(base, out);
                expr(index, out);
            }
            Quant { domain, body, .. } => {
                expr(domain, out);
                expr(body, out);
            }
            Int(_) | Str(_) | Bool(_) | Null | Var(_) => {}
        }
    }
    fn block(b: &ast::Block, out: &mut Vec<String>) {
        b.stmts.iter().for_each(|s| stmt(s, out));
    }
    fn stmt(s: &ast::Stmt, out: &mut Vec<String>) {
        use ast::StmtKind::*;
        match &s.kind {
            Let { value, .. } => expr(value, out),
            Assign { target, value } | AugAssign { target, value, .. } => {
                expr(target, out);
                expr(value, out);
            }
            If {
                cond,
                then_block,
                else_branch,
            } => {
                expr(cond, out);
                block(then_block, out);
                match else_branch {
                    Some(ast::ElseBranch::Block(b)) => block(b, out),
                    Some(ast::ElseBranch::If(s)) => stmt(s, out),
                    None => {}
                }
            }
            While { cond, body } => {
                expr(cond, out);
                block(body, out);
            }
            For { iter, body, .. } => {
                expr(iter, out);
                block(body, out);
            }
            Return(Some(e)) | Assert(e) | Expr(e) => expr(e, out),
            Return(None) | Break | Continue => {}
        }
    }
    let mut out = Vec::new();
    block(&item.body, &mut out);
    // Recursion does not make a method depend on the rest of the project.
    out.retain(|name| name != &item.name);
    out
}

/// 1 + decision points: conditions of `if`/`while`, `for` headers, and
/// short-circuit `&&`/`||` operators.
pub fn cyclomatic_complexity(record: &MethodRecord) -> usize {
    1 + record
        .spans
        .iter()
        .filter(|s| match s.kind {
            SpanKind::Condition | SpanKind::LoopHeader => true,
            SpanKind::BinaryOp => s.payload == "&&" || s.payload == "||",
            _ => false,
        })
        .count()
}

/// Word count of the doc comment and whether it clears the strict
/// more-than-15-words bar.
pub fn comment_quality(record: &MethodRecord) -> (usize, bool) {
    let words = count_words(&record.doc_comment);
    (words, words > 15)
}

pub fn classify_dependency(record: &MethodRecord, allowlist: &BTreeSet<String>) -> DependencyClass {
    if record.external_refs.iter().all(|r| allowlist.contains(r)) {
        DependencyClass::Standalone
    } else {
        DependencyClass::Dependent
    }
}

pub fn default_allowlist() -> BTreeSet<String> {
    FIXTURE_BUILTINS.iter().map(|s| s.to_string()).collect()
}

pub fn loc_bucket(record: &MethodRecord) -> LocBucket {
    match record.loc {
        0..=19 => LocBucket::Short,
        20..=39 => LocBucket::Medium,
        _ => LocBucket::Long,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(text: &str) -> SourceUnit {
        parse_unit("u", "u.fx", text, FIXTURE_ADAPTER).unwrap()
    }

    fn kinds(u: &SourceUnit) -> Vec<(SpanKind, &str)> {
        u.spans.iter().map(|s| (s.kind, s.payload.as_str())).collect()
    }

    fn method(body: &str) -> MethodRecord {
        let text = format!("fn f(a, b, n, xs) {{\n{body}\n}}\n");
        extract_methods(&unit(&text)).remove(0)
    }

    #[test]
    fn empty_input_has_no_spans() {
        let u = unit("");
        assert!(u.spans.is_empty());
        assert!(extract_methods(&u).is_empty());
    }

    #[test]
    fn return_comparison_spans() {
        let u = unit("fn lt(a, b) { return a < b; }");
        let ks = kinds(&u);
        assert_eq!(ks, vec![(SpanKind::ReturnExpr, "a < b"), (SpanKind::BinaryOp, "<")]);
        assert!(!ks.iter().any(|(k, _)| *k == SpanKind::Condition));
    }

    #[test]
    fn if_condition_and_assignment_rhs() {
        let u = unit("fn f(n) { if (n < 0) { n = 0; } return n; }");
        let conds: Vec<_> = u.spans.iter().filter(|s| s.kind == SpanKind::Condition).collect();
        assert_eq!(conds.len(), 1);
        assert_eq!(conds[0].payload, "n < 0");
        let rhs: Vec<_> = u.spans.iter().filter(|s| s.kind == SpanKind::AssignRhs).collect();
        assert_eq!(rhs.len(), 1);
        assert_eq!(rhs[0].payload, "0");
    }

    #[test]
    fn unknown_adapter_is_rejected() {
        let err = parse_unit("u", "u.py", "", "python").unwrap_err();
        assert_eq!(err, FrontendError::UnknownAdapter("python".into()));
    }

    #[test]
    fn syntax_error_carries_line() {
        let err = parse_unit("u", "u.fx", "fn f() {\n\n  return 1 +;\n}", FIXTURE_ADAPTER).unwrap_err();
        assert!(matches!(err, FrontendError::Syntax { line: 3, .. }));
    }

    #[test]
    fn methods_in_declaration_order_with_docs() {
        let text = "/// Adds two numbers.\nfn add(a, b) { return a + b; }\n\nfn sub(a, b) { return a - b; }\ntest t { assert add(1, 2) == 3; }\n";
        let ms = extract_methods(&unit(text));
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[0].name, "add");
        assert_eq!(ms[0].signature, "fn add(a, b)");
        assert_eq!(ms[0].doc_comment, "/// Adds two numbers.");
        assert_eq!(ms[1].name, "sub");
        assert_eq!(ms[1].doc_comment, "");
    }

    #[test]
    fn cyclomatic_counts() {
        assert_eq!(method("return a + b;").cyclomatic, 1);
        assert_eq!(method("if (a < b) { return a; }\nreturn b;").cyclomatic, 2);
        assert_eq!(
            method("if (a < b) { return a; }\nwhile (n > 0) { n -= 1; }\nreturn b;").cyclomatic,
            3
        );
        assert_eq!(method("return a < b && b < n || n == 0;").cyclomatic, 3);
        assert_eq!(method("for (x in xs) { n += x; }\nreturn n;").cyclomatic, 2);
    }

    #[test]
    fn loc_skips_blank_and_comment_lines() {
        let m = method("  let t = 0;\n\n  // note\n  t += 1;\n  return t;");
        assert_eq!(m.loc, 3);
    }

    #[test]
    fn comment_quality_boundaries() {
        let mut m = method("return 0;");
        m.doc_comment = String::new();
        assert_eq!(comment_quality(&m), (0, false));
        m.doc_comment = "one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen".into();
        assert_eq!(comment_quality(&m), (15, false));
        m.doc_comment = "Returns the parent node of the given node or None when the node is the root of the tree.".into();
        assert_eq!(comment_quality(&m), (19, true));
        // tokens without letters do not count
        m.doc_comment = "/// 42 -- ok".into();
        assert_eq!(comment_quality(&m).0, 1);
    }

    #[test]
    fn dependency_classification() {
        let allow: BTreeSet<String> = ["len", "sorted"].iter().map(|s| s.to_string()).collect();
        let m = method("return sorted(xs)[len(xs) - 1];");
        assert_eq!(m.external_refs, vec!["sorted", "len"]);
        assert_eq!(classify_dependency(&m, &allow), DependencyClass::Standalone);
        let m = method("return helper(xs);");
        assert_eq!(classify_dependency(&m, &allow), DependencyClass::Dependent);
        let m = method("return a;");
        assert_eq!(classify_dependency(&m, &BTreeSet::new()), DependencyClass::Standalone);
    }

    #[test]
    fn recursion_is_not_an_external_reference() {
        let ms = extract_methods(&unit("fn f(n) { if (n == 0) { return 0; } return f(n - 1); }"));
        assert!(ms[0].external_refs.is_empty());
    }

    #[test]
    fn loc_buckets() {
        let mut m = method("return 0;");
        for (loc, bucket) in [(0, LocBucket::Short), (19, LocBucket::Short), (20, LocBucket::Medium), (39, LocBucket::Medium), (40, LocBucket::Long)] {
            m.loc = loc;
            assert_eq!(loc_bucket(&m), bucket);
        }
    }

    #[test]
    fn call_arg_and_void_call_spans() {
        let u = unit("fn f(xs, v) { push(xs, v); total = add(total, g(v, 1)); }");
        let ks = kinds(&u);
        assert!(ks.contains(&(SpanKind::VoidCallStmt, "push(xs, v);")));
        assert!(ks.contains(&(SpanKind::CallArg, ", v")));
        assert!(ks.contains(&(SpanKind::CallArg, ", g(v, 1)")));
        // the nested call's argument overlaps the outer one and is dropped
        assert!(!ks.contains(&(SpanKind::CallArg, ", 1")));
        let calls: Vec<_> = ks.iter().filter(|(k, _)| *k == SpanKind::Call).collect();
        assert_eq!(calls.len(), 2);
    }

    #[test]
    fn aug_assign_and_keyword_spans() {
        let u = unit("fn f(i) { while (true) { i += 1; break; } }");
        let ks = kinds(&u);
        assert!(ks.contains(&(SpanKind::AugAssign, "i += 1")));
        assert!(ks.contains(&(SpanKind::KeywordStmt, "break")));
        assert!(ks.contains(&(SpanKind::BooleanLiteral, "true")));
    }

    #[test]
    fn spans_lie_inside_method_bodies() {
        let text = "fn a(x) { return x + 1; }\nfn b(y) { return y * 2; }\n";
        for m in extract_methods(&unit(text)) {
            for s in &m.spans {
                assert!(s.byte_start >= m.body_span.start && s.byte_end <= m.body_span.end);
            }
        }
    }
}
