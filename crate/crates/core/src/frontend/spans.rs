//! Mutation-site labelling over the fixture syntax tree.

use std::ops::Range;

use super::ast::*;
use super::{LabeledSpan, SpanKind};

/// Collects labelled spans for every item in the program, sorted by
/// (byte_start, kind). Spans of one kind never overlap: when two would,
/// the one that starts first (the outer one) is kept.
pub fn label_program(text: &str, program: &Program) -> Vec<LabeledSpan> {
    let mut raw: Vec<(SpanKind, Range<usize>)> = Vec::new();
    for item in &program.items {
        walk_block(&item.body, &mut raw);
    }
    finish(text, raw)
}

fn finish(text: &str, mut raw: Vec<(SpanKind, Range<usize>)>) -> Vec<LabeledSpan> {
    raw.sort_by(|a, b| {
        (a.0, a.1.start, std::cmp::Reverse(a.1.end)).cmp(&(b.0, b.1.start, std::cmp::Reverse(b.1.end)))
    });
    let mut kept: Vec<(SpanKind, Range<usize>)> = Vec::with_capacity(raw.len());
    for (kind, range) in raw {
        if range.is_empty() {
            continue;
        }
        if let Some((last_kind, last)) = kept.last() {
            if *last_kind == kind && range.start < last.end {
                continue;
            }
        }
        kept.push((kind, range));
    }
    let line_starts = line_starts(text);
    let mut spans: Vec<LabeledSpan> = kept
        .into_iter()
        .map(|(kind, r)| LabeledSpan {
            kind,
            byte_start: r.start,
            byte_end: r.end,
            line: line_of(&line_starts, r.start),
            payload: text[r].to_string(),
        })
        .collect();
    spans.sort_by_key(|s| (s.byte_start, s.kind, s.byte_end));
    spans
}

pub(crate) fn line_starts(text: &str) -> Vec<usize> {
    std::iter::once(0)
        .chain(text.match_indices('\n').map(|(i, _)| i + 1))
        .collect()
}

pub(crate) fn line_of(line_starts: &[usize], byte: usize) -> usize {
    match line_starts.binary_search(&byte) {
        Ok(i) => i + 1,
        Err(i) => i,
    }
}

fn walk_block(block: &Block, out: &mut Vec<(SpanKind, Range<usize>)>) {
    for stmt in &block.stmts {
        walk_stmt(stmt, out);
    }
}

fn without_semi(stmt: &Stmt) -> Range<usize> {
    stmt.span.start..stmt.span.end - 1
}

fn walk_stmt(stmt: &Stmt, out: &mut Vec<(SpanKind, Range<usize>)>) {
    match &stmt.kind {
        StmtKind::Let { value, .. } => {
            out.push((SpanKind::AssignRhs, value.span.clone()));
            walk_expr(value, out);
        }
        StmtKind::Assign { target, value } => {
            out.push((SpanKind::AssignRhs, value.span.clone()));
            walk_expr(target, out);
            walk_expr(value, out);
        }
        StmtKind::AugAssign { target, value, .. } => {
            out.push((SpanKind::AugAssign, without_semi(stmt)));
            walk_expr(target, out);
            walk_expr(value, out);
        }
        StmtKind::If {
            cond,
            then_block,
            else_branch,
        } => {
            out.push((SpanKind::Condition, cond.span.clone()));
            walk_expr(cond, out);
            walk_block(then_block, out);
            match else_branch {
                Some(ElseBranch::Block(b)) => walk_block(b, out),
                Some(ElseBranch::If(s)) => walk_stmt(s, out),
                None => {}
            }
        }
        StmtKind::While { cond, body } => {
            out.push((SpanKind::Condition, cond.span.clone()));
            walk_expr(cond, out);
            walk_block(body, out);
        }
        StmtKind::For {
            iter,
            header_span,
            body,
            ..
        } => {
            out.push((SpanKind::LoopHeader, header_span.clone()));
            walk_expr(iter, out);
            walk_block(body, out);
        }
        StmtKind::Return(value) => {
            if let Some(v) = value {
                out.push((SpanKind::ReturnExpr, v.span.clone()));
                walk_expr(v, out);
            }
        }
        StmtKind::Break | StmtKind::Continue => {
            out.push((SpanKind::KeywordStmt, without_semi(stmt)));
        }
        StmtKind::Assert(e) => walk_expr(e, out),
        StmtKind::Expr(e) => {
            if matches!(e.kind, ExprKind::Call { .. }) {
                out.push((SpanKind::VoidCallStmt, stmt.span.clone()));
            }
            walk_expr(e, out);
        }
    }
}

fn walk_expr(expr: &Expr, out: &mut Vec<(SpanKind, Range<usize>)>) {
    match &expr.kind {
        ExprKind::Int(_) => out.push((SpanKind::NumericLiteral, expr.span.clone())),
        ExprKind::Str(_) => out.push((SpanKind::StringLiteral, expr.span.clone())),
        ExprKind::Bool(_) => out.push((SpanKind::BooleanLiteral, expr.span.clone())),
        ExprKind::Null | ExprKind::Var(_) => {}
        ExprKind::List(elems) => elems.iter().for_each(|e| walk_expr(e, out)),
        ExprKind::Record(fields) => fields.iter().for_each(|(_, e)| walk_expr(e, out)),
        ExprKind::Unary {
            op_span, operand, ..
        } => {
            out.push((SpanKind::UnaryOp, op_span.clone()));
            walk_expr(operand, out);
        }
        ExprKind::Binary {
            op_span, lhs, rhs, ..
        } => {
            out.push((SpanKind::BinaryOp, op_span.clone()));
            walk_expr(lhs, out);
            walk_expr(rhs, out);
        }
        ExprKind::Call { args, .. } => {
            out.push((SpanKind::Call, expr.span.clone()));
            match args.len() {
                0 => {}
                1 => out.push((SpanKind::CallArg, args[0].span.clone())),
                n => out.push((SpanKind::CallArg, args[n - 2].span.end..args[n - 1].span.end)),
            }
            args.iter().for_each(|a| walk_expr(a, out));
        }
        ExprKind::Field { base, .. } => walk_expr(base, out),
        ExprKind::Index { base, index } => {
            walk_expr(base, out);
            walk_expr(index, out);
        }
        ExprKind::Quant { domain, body, .. } => {
            walk_expr(domain, out);
            walk_expr(body, out);
        }
    }
}
