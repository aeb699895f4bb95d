//! Line-replacement mutants proposed by a completion model.

use std::collections::BTreeSet;

use super::{mark_duplicates, splice, Mutant, MutantStatus, MutgenError, Scheme};
use crate::frontend::{line_starts, MethodRecord, SourceUnit, SpanKind};
use crate::llmclient::{ClientError, CompletionClient, PromptRequest};

pub const PLACEHOLDER: &str = "<<MUTATE_THIS_LINE>>";

const SYSTEM: &str = "You inject bugs for mutation testing. The line marked <<MUTATE_THIS_LINE>> \
has been removed from the code. Write one alternative version of the original line that still \
compiles but introduces a realistic defect. Reply with that single line of code and nothing else.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmTarget {
    pub line: usize,
    pub placeholder_text: String,
}

/// Byte range of line `line` (1-based) without its terminator.
fn line_range(text: &str, starts: &[usize], line: usize) -> std::ops::Range<usize> {
    let start = starts[line - 1];
    let end = text[start..].find('\n').map_or(text.len(), |i| start + i);
    start..end
}

/// One target per body line holding a condition, loop header or call.
pub fn select_llm_mutation_targets(unit: &SourceUnit, method: &MethodRecord) -> Vec<LlmTarget> {
    let lines: BTreeSet<usize> = method
        .spans
        .iter()
        .filter(|s| matches!(s.kind, SpanKind::Condition | SpanKind::LoopHeader | SpanKind::Call))
        .map(|s| s.line)
        .collect();
    let starts = line_starts(&unit.text);
    lines
        .into_iter()
        .map(|line| LlmTarget {
            line,
            placeholder_text: splice(&unit.text, line_range(&unit.text, &starts, line), PLACEHOLDER),
        })
        .collect()
}

pub fn llm_prompt(target: &LlmTarget, original_line: &str) -> PromptRequest {
    let mut user = target.placeholder_text.clone();
    if !user.ends_with('\n') {
        user.push('\n');
    }
    user.push_str("\nOriginal line:\n");
    user.push_str(original_line.trim());
    user.push('\n');
    let mut req = PromptRequest::new(SYSTEM, user);
    req.max_output_chars = 400;
    req
}

fn is_fatal(e: &ClientError) -> bool {
    matches!(e, ClientError::AuthMissing(_) | ClientError::Config(_))
}

/// Queries the client for every target and turns usable answers into
/// mutants, in target order. Per-request failures skip the target;
/// misconfiguration of the client is returned as an error.
pub fn generate_llm_mutants(
    unit: &SourceUnit,
    method: &MethodRecord,
    targets: &[LlmTarget],
    client: &dyn CompletionClient,
) -> Result<Vec<Mutant>, MutgenError> {
    let starts = line_starts(&unit.text);
    let originals: Vec<(std::ops::Range<usize>, &str)> = targets
        .iter()
        .map(|t| {
            let r = line_range(&unit.text, &starts, t.line);
            let raw = &unit.text[r.clone()];
            let lead = raw.len() - raw.trim_start().len();
            let content = raw.trim();
            (r.start + lead..r.start + lead + content.len(), content)
        })
        .collect();
    let responses: Vec<Result<String, ClientError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = targets
            .iter()
            .zip(&originals)
            .map(|(t, (_, original))| {
                let req = llm_prompt(t, original);
                scope.spawn(move || client.complete(&req))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(ClientError::Transport("worker panicked".into()))))
            .collect()
    });

    let mut mutants = Vec::new();
    for ((target, (span, original)), response) in targets.iter().zip(&originals).zip(responses) {
        let response = match response {
            Ok(r) => r,
            Err(e) if is_fatal(&e) => {
                return Err(MutgenError::Client {
                    line: target.line,
                    source: e,
                })
            }
            Err(e) => {
                tracing::warn!(line = target.line, error = %e, "no LLM mutant for target");
                continue;
            }
        };
        let replacement = response.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string();
        if replacement.is_empty() || replacement == *original {
            tracing::info!(line = target.line, "dropping LLM response identical to the original line");
            continue;
        }
        let rendered_text = splice(&unit.text, span.clone(), &replacement);
        let mutant_id = format!("{}-llm-L{}", method.name, target.line);
        if unit.with_text(rendered_text.clone()).is_err() {
            tracing::info!(mutant = %mutant_id, "dropping unparseable LLM mutant");
            continue;
        }
        mutants.push(Mutant {
            mutant_id,
            method_id: method.method_id.clone(),
            scheme: Scheme::Llm,
            operator_name: None,
            span: span.clone(),
            line: target.line,
            original_payload: original.to_string(),
            replacement,
            rendered_text,
            status: MutantStatus::Candidate,
        });
    }
    mark_duplicates(&mut mutants);
    Ok(mutants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{find_method, parse_unit, FIXTURE_ADAPTER};
    use std::collections::HashMap;

    const SRC: &str = "fn f(n, xs) {\n  if (n < 0) {\n    n = add(n, 1);\n  }\n  for (x in xs) {\n    n += x;\n  }\n  return n;\n}\n";

    struct Canned(HashMap<usize, Result<String, ClientError>>);

    impl CompletionClient for Canned {
        fn complete(&self, req: &PromptRequest) -> Result<String, ClientError> {
            for (k, v) in &self.0 {
                let original = SRC.lines().nth(k - 1).unwrap().trim();
                if req.user.ends_with(&format!("Original line:\n{original}\n")) {
                    return v.clone();
                }
            }
            Err(ClientError::ReplayMiss(req.request_id.clone()))
        }
    }

    fn setup() -> (SourceUnit, MethodRecord) {
        let u = parse_unit("u", "u.fx", SRC, FIXTURE_ADAPTER).unwrap();
        let m = find_method(&u, "f").unwrap();
        (u, m)
    }

    #[test]
    fn targets_are_condition_call_and_loop_lines() {
        let (u, m) = setup();
        let t = select_llm_mutation_targets(&u, &m);
        assert_eq!(t.iter().map(|t| t.line).collect::<Vec<_>>(), vec![2, 3, 5]);
        assert_eq!(t[0].placeholder_text.lines().nth(1), Some(PLACEHOLDER));
    }

    #[test]
    fn straight_line_has_no_targets() {
        let u = parse_unit("u", "u.fx", "fn g(a) { let b = a + 1; return b; }", FIXTURE_ADAPTER).unwrap();
        let m = find_method(&u, "g").unwrap();
        assert!(select_llm_mutation_targets(&u, &m).is_empty());
    }

    #[test]
    fn responses_become_mutants_and_identities_drop() {
        let (u, m) = setup();
        let targets = select_llm_mutation_targets(&u, &m);
        let client = Canned(HashMap::from([
            (2, Ok("if (n <= 0) {".to_string())),
            (3, Ok("  n = add(n, 1);\nextra".to_string())),
            (5, Err(ClientError::Http(500))),
        ]));
        let ms = generate_llm_mutants(&u, &m, &targets, &client).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].mutant_id, "f-llm-L2");
        assert_eq!(ms[0].scheme, Scheme::Llm);
        assert!(ms[0].operator_name.is_none());
        assert!(ms[0].rendered_text.contains("\n  if (n <= 0) {\n"));
    }

    #[test]
    fn auth_errors_propagate() {
        let (u, m) = setup();
        let targets = select_llm_mutation_targets(&u, &m);
        let client = Canned(HashMap::from([(2, Err(ClientError::AuthMissing("K".into())))]));
        assert!(matches!(generate_llm_mutants(&u, &m, &targets, &client), Err(MutgenError::Client { line: 2, .. })));
    }
}
