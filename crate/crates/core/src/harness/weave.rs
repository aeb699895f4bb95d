//! Template-based weaving of postcondition guards into subject code.

use std::sync::LazyLock;

use regex::Regex;

use super::{Condition, HarnessError, PostconditionSet, OLD_SNAPSHOTS, POSTCONDITIONS};
use crate::frontend::parser::parse_program;
use crate::frontend::{check_expression, MethodRecord, SourceUnit, FIXTURE_ADAPTER};

static LEFTOVER_OLD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bold\s*\(").expect("valid regex"));
static COND_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z0-9_.\-]+$").expect("valid regex"));

/// How guards and snapshots are spelled in a subject language.
/// `{var}`, `{expr}`, `{cond}` and `{id}` are substituted verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardSyntax {
    pub snapshot: String,
    pub guard: String,
    pub indent: String,
}

impl GuardSyntax {
    pub fn fixture() -> Self {
        GuardSyntax {
            snapshot: "let {var} = snapshot({expr});".into(),
            guard: "ensure({cond}, \"{id}\");".into(),
            indent: "  ".into(),
        }
    }
}

fn snapshot_var(cond_index: usize, expr_index: usize) -> String {
    format!("__old_{cond_index}_{expr_index}")
}

/// Rewrites `old(e)` references into snapshot variable names.
fn resolve_old(index: usize, cond: &Condition) -> Result<String, HarnessError> {
    let mut text = cond.source_text.clone();
    for (j, expr) in cond.old_exprs.iter().enumerate() {
        let var = snapshot_var(index, j);
        text = text.replace(&format!("old({expr})"), &var);
        text = text.replace(&format!("old({})", expr.trim()), &var);
    }
    if LEFTOVER_OLD.is_match(&text) {
        return Err(HarnessError::RenderError {
            cond_id: cond.cond_id.clone(),
            message: "`old(..)` refers to an expression not listed in old_exprs".into(),
        });
    }
    Ok(text)
}

/// Expands both placeholders of `template`. Text outside the placeholder
/// sites is copied unchanged.
pub fn render_template(template: &str, pset: &PostconditionSet, syntax: &GuardSyntax) -> Result<String, HarnessError> {
    let mut snapshots = Vec::new();
    let mut guards = Vec::new();
    for (i, cond) in pset.conditions.iter().enumerate() {
        if !COND_ID.is_match(&cond.cond_id) {
            return Err(HarnessError::RenderError {
                cond_id: cond.cond_id.clone(),
                message: "condition ids may only contain letters, digits, `_`, `.` and `-`".into(),
            });
        }
        for (j, expr) in cond.old_exprs.iter().enumerate() {
            let line = syntax
                .snapshot
                .replace("{var}", &snapshot_var(i, j))
                .replace("{expr}", expr);
            snapshots.push(format!("{}{line}", syntax.indent));
        }
        let text = resolve_old(i, cond)?;
        let line = syntax.guard.replace("{cond}", &text).replace("{id}", &cond.cond_id);
        guards.push(format!("{}{line}", syntax.indent));
    }
    if !template.contains(OLD_SNAPSHOTS) || !template.contains(POSTCONDITIONS) {
        return Err(HarnessError::TemplateMissing("template lacks placeholders".into()));
    }
    Ok(template
        .replace(OLD_SNAPSHOTS, &snapshots.join("\n"))
        .replace(POSTCONDITIONS, &guards.join("\n")))
}

/// Builds the fixture adapter's weaving template: the method is renamed in
/// place (so line numbers are unchanged) and a wrapper with the original
/// name is appended that snapshots, calls the body and checks the guards.
pub fn fixture_template(unit: &SourceUnit, method: &MethodRecord) -> Result<String, HarnessError> {
    let missing = || HarnessError::TemplateMissing(method.name.clone());
    if unit.adapter_id != FIXTURE_ADAPTER {
        return Err(missing());
    }
    let program = parse_program(&unit.text).map_err(|_| missing())?;
    let item = program.functions().find(|f| f.name == method.name).ok_or_else(missing)?;
    let inner = format!("__{}_body", item.name);
    let params = item.params.join(", ");
    let mut text = String::with_capacity(unit.text.len() + 128);
    text.push_str(&unit.text[..item.name_span.start]);
    text.push_str(&inner);
    text.push_str(&unit.text[item.name_span.end..]);
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str(&format!(
        "\nfn {name}({params}) {{\n{OLD_SNAPSHOTS}\n  let result = {inner}({params});\n{POSTCONDITIONS}\n  return result;\n}}\n",
        name = item.name,
    ));
    Ok(text)
}

/// Weaves `pset` into `unit` around `method`.
pub fn instrument(unit: &SourceUnit, method: &MethodRecord, pset: &PostconditionSet) -> Result<SourceUnit, HarnessError> {
    let template = fixture_template(unit, method)?;
    for (i, cond) in pset.conditions.iter().enumerate() {
        let render_err = |e: crate::frontend::FrontendError| HarnessError::RenderError {
            cond_id: cond.cond_id.clone(),
            message: e.to_string(),
        };
        for expr in &cond.old_exprs {
            check_expression(expr, &unit.adapter_id).map_err(render_err)?;
        }
        check_expression(&resolve_old(i, cond)?, &unit.adapter_id).map_err(render_err)?;
    }
    let text = render_template(&template, pset, &GuardSyntax::fixture())?;
    unit.with_text(text).map_err(|e| HarnessError::RenderError {
        cond_id: pset.set_id.clone(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{find_method, parse_unit};

    const SRC: &str = "/// Adds.\nfn add(acct, n) {\n  acct.count += n;\n  return acct.count;\n}\n";

    fn unit() -> (SourceUnit, MethodRecord) {
        let u = parse_unit("u", "u.fx", SRC, FIXTURE_ADAPTER).unwrap();
        let m = find_method(&u, "add").unwrap();
        (u, m)
    }

    fn pset(conds: Vec<Condition>) -> PostconditionSet {
        PostconditionSet {
            set_id: "s".into(),
            conditions: conds,
            meta: Default::default(),
        }
    }

    fn cond(id: &str, text: &str, old: &[&str]) -> Condition {
        Condition {
            cond_id: id.into(),
            source_text: text.into(),
            old_exprs: old.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn empty_set_expands_placeholders_to_nothing() {
        let (u, m) = unit();
        let woven = instrument(&u, &m, &pset(vec![])).unwrap();
        let template = fixture_template(&u, &m).unwrap();
        assert_eq!(woven.text, template.replace(OLD_SNAPSHOTS, "").replace(POSTCONDITIONS, ""));
        assert!(woven.text.starts_with("/// Adds.\nfn __add_body(acct, n) {\n  acct.count += n;\n"));
    }

    #[test]
    fn one_guard_per_condition() {
        let (u, m) = unit();
        let woven = instrument(&u, &m, &pset(vec![cond("pc1", "result >= 0", &[])])).unwrap();
        assert_eq!(woven.text.matches("ensure(").count(), 1);
        assert!(woven.text.contains("  ensure(result >= 0, \"pc1\");"));
    }

    #[test]
    fn snapshot_precedes_body_call() {
        let (u, m) = unit();
        let c = cond("pc1", "acct.count == old(acct.count) + n", &["acct.count"]);
        let woven = instrument(&u, &m, &pset(vec![c])).unwrap();
        let snap = woven.text.find("let __old_0_0 = snapshot(acct.count);").unwrap();
        let call = woven.text.find("let result = __add_body(acct, n);").unwrap();
        assert!(snap < call);
        assert!(woven.text.contains("ensure(acct.count == __old_0_0 + n, \"pc1\");"));
    }

    #[test]
    fn unresolved_old_is_a_render_error() {
        let (u, m) = unit();
        let c = cond("pc1", "result == old(n)", &[]);
        assert!(matches!(instrument(&u, &m, &pset(vec![c])), Err(HarnessError::RenderError { .. })));
    }

    #[test]
    fn unparsable_condition_is_a_render_error() {
        let (u, m) = unit();
        let c = cond("pc2", "result >= ", &[]);
        assert!(matches!(
            instrument(&u, &m, &pset(vec![c])),
            Err(HarnessError::RenderError { cond_id, .. }) if cond_id == "pc2"
        ));
    }

    #[test]
    fn unknown_method_has_no_template() {
        let (u, mut m) = unit();
        m.name = "nope".into();
        assert_eq!(fixture_template(&u, &m), Err(HarnessError::TemplateMissing("nope".into())));
    }

    #[test]
    fn generic_template_is_bit_exact_outside_placeholders() {
        let template = "a\n{{OLD_SNAPSHOTS}}\nb\n{{POSTCONDITIONS}}\nc";
        let syntax = GuardSyntax {
            snapshot: "{var} = copy({expr})".into(),
            guard: "check({cond}, '{id}')".into(),
            indent: "    ".into(),
        };
        let out = render_template(template, &pset(vec![cond("p", "x == old(y)", &["y"])]), &syntax).unwrap();
        assert_eq!(out, "a\n    __old_0_0 = copy(y)\nb\n    check(x == __old_0_0, 'p')\nc");
    }
}
