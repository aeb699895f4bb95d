//! Single-hunk unified diffs between a unit and one of its mutants.

const CONTEXT: usize = 3;
const NO_NEWLINE: &str = "\\ No newline at end of file";

fn push_line(out: &mut String, prefix: char, line: &str) {
    out.push(prefix);
    match line.strip_suffix('\n') {
        Some(body) => {
            out.push_str(body);
            out.push('\n');
        }
        None => {
            out.push_str(line);
            out.push('\n');
            out.push_str(NO_NEWLINE);
            out.push('\n');
        }
    }
}

fn range_header(start0: usize, count: usize) -> String {
    let start = if count == 0 { start0 } else { start0 + 1 };
    format!("{start},{count}")
}

/// Unified diff with three lines of context. Identical inputs give "".
pub fn unified_diff(path: &str, old: &str, new: &str) -> String {
    if old == new {
        return String::new();
    }
    let a: Vec<&str> = old.split_inclusive('\n').collect();
    let b: Vec<&str> = new.split_inclusive('\n').collect();
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let max_suffix = a.len().min(b.len()) - prefix;
    let suffix = a
        .iter()
        .rev()
        .zip(b.iter().rev())
        .take(max_suffix)
        .take_while(|(x, y)| x == y)
        .count();
    let ctx_start = prefix.saturating_sub(CONTEXT);
    let a_end = a.len() - suffix;
    let b_end = b.len() - suffix;
    let ctx_end = (a_end + CONTEXT).min(a.len());
    let trailing = ctx_end - a_end;

    let mut out = format!("--- a/{path}\n+++ b/{path}\n");
    out.push_str(&format!(
        "@@ -{} +{} @@\n",
        range_header(ctx_start, ctx_end - ctx_start),
        range_header(ctx_start, (b_end + trailing) - ctx_start)
    ));
    for line in &a[ctx_start..prefix] {
        push_line(&mut out, ' ', line);
    }
    for line in &a[prefix..a_end] {
        push_line(&mut out, '-', line);
    }
    for line in &b[prefix..b_end] {
        push_line(&mut out, '+', line);
    }
    for line in &a[a_end..ctx_end] {
        push_line(&mut out, ' ', line);
    }
    out
}

/// Applies a diff produced by [`unified_diff`] to `old`. Returns `None`
/// when the diff does not fit.
pub fn apply_unified_diff(old: &str, diff: &str) -> Option<String> {
    if diff.is_empty() {
        return Some(old.to_string());
    }
    let a: Vec<&str> = old.split_inclusive('\n').collect();
    let mut lines = diff.split_inclusive('\n').peekable();
    let mut out = String::new();
    let mut cursor = 0usize;
    while let Some(line) = lines.next() {
        let Some(header) = line.strip_prefix("@@ -") else { continue };
        let start: usize = header.split([',', ' ']).next()?.parse().ok()?;
        let start0 = start.saturating_sub(1);
        if start0 < cursor || start0 > a.len() {
            return None;
        }
        for l in &a[cursor..start0] {
            out.push_str(l);
        }
        cursor = start0;
        while let Some(&next) = lines.peek() {
            if next.starts_with("@@") {
                break;
            }
            lines.next();
            let mut body = next[1..].to_string();
            let no_newline = lines.peek().is_some_and(|n| n.trim_end_matches('\n') == NO_NEWLINE);
            if no_newline {
                lines.next();
                body.pop();
            }
            match next.as_bytes().first() {
                Some(b' ') | Some(b'-') => {
                    if a.get(cursor) != Some(&body.as_str()) {
                        return None;
                    }
                    if next.starts_with(' ') {
                        out.push_str(&body);
                    }
                    cursor += 1;
                }
                Some(b'+') => out.push_str(&body),
                _ => return None,
            }
        }
    }
    for l in &a[cursor..] {
        out.push_str(l);
    }
    Some(out)
}
