//! Recursive-descent parser for the fixture language.

use super::ast::*;
use super::lexer::{tokenize, TokKind, Token};
use super::FrontendError;

pub fn parse_program(text: &str) -> Result<Program, FrontendError> {
    let mut p = Parser::new(tokenize(text)?);
    let mut items = Vec::new();
    while !p.at(&TokKind::Eof) {
        items.push(p.item()?);
    }
    Ok(Program { items })
}

/// Parses a standalone expression; the whole input must be consumed.
pub fn parse_expr(text: &str) -> Result<Expr, FrontendError> {
    let mut p = Parser::new(tokenize(text)?);
    let e = p.expr()?;
    if !p.at(&TokKind::Eof) {
        return Err(p.unexpected("end of expression"));
    }
    Ok(e)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(toks: Vec<Token>) -> Self {
        Self { toks, pos: 0 }
    }

    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, off: usize) -> &TokKind {
        let idx = (self.pos + off).min(self.toks.len() - 1);
        &self.toks[idx].kind
    }

    fn at(&self, kind: &TokKind) -> bool {
        &self.peek().kind == kind
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, wanted: &str) -> FrontendError {
        let t = self.peek();
        let found = match &t.kind {
            TokKind::Eof => "end of input".to_string(),
            k => format!("{k:?}"),
        };
        FrontendError::syntax(t.line, format!("expected {wanted}, found {found}"))
    }

    fn expect(&mut self, kind: TokKind, wanted: &str) -> Result<Token, FrontendError> {
        if self.at(&kind) {
            Ok(self.bump())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn ident(&mut self) -> Result<(String, Token), FrontendError> {
        match &self.peek().kind {
            TokKind::Ident(name) => {
                let name = name.clone();
                Ok((name, self.bump()))
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn item(&mut self) -> Result<Item, FrontendError> {
        let kw = self.peek().clone();
        match kw.kind {
            TokKind::Fn => {
                self.bump();
                let (name, name_tok) = self.ident()?;
                self.expect(TokKind::LParen, "'('")?;
                let mut params = Vec::new();
                if !self.at(&TokKind::RParen) {
                    loop {
                        let (param, tok) = self.ident()?;
                        if params.contains(&param) {
                            return Err(FrontendError::syntax(
                                tok.line,
                                format!("duplicate parameter `{param}`"),
                            ));
                        }
                        params.push(param);
                        if self.at(&TokKind::Comma) {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                let close = self.expect(TokKind::RParen, "')'")?;
                let body = self.block()?;
                Ok(Item {
                    kind: ItemKind::Function,
                    name,
                    name_span: name_tok.span,
                    params,
                    body,
                    sig_span: kw.span.start..close.span.end,
                    doc_span: kw.doc.clone(),
                    line: kw.line,
                })
            }
            TokKind::Test => {
                self.bump();
                let (name, name_tok) = self.ident()?;
                let body = self.block()?;
                Ok(Item {
                    kind: ItemKind::Test,
                    name,
                    name_span: name_tok.span.clone(),
                    params: Vec::new(),
                    body,
                    sig_span: kw.span.start..name_tok.span.end,
                    doc_span: kw.doc.clone(),
                    line: kw.line,
                })
            }
            _ => Err(self.unexpected("`fn` or `test`")),
        }
    }

    fn block(&mut self) -> Result<Block, FrontendError> {
        let open = self.expect(TokKind::LBrace, "'{'")?;
        let mut stmts = Vec::new();
        while !self.at(&TokKind::RBrace) {
            if self.at(&TokKind::Eof) {
                return Err(self.unexpected("'}'"));
            }
            stmts.push(self.stmt()?);
        }
        let close = self.bump();
        Ok(Block {
            stmts,
            span: open.span.start..close.span.end,
        })
    }

    fn paren_expr(&mut self) -> Result<Expr, FrontendError> {
        self.expect(TokKind::LParen, "'('")?;
        let e = self.expr()?;
        self.expect(TokKind::RParen, "')'")?;
        Ok(e)
    }

    fn semi(&mut self) -> Result<usize, FrontendError> {
        Ok(self.expect(TokKind::Semi, "';'")?.span.end)
    }

    fn stmt(&mut self) -> Result<Stmt, FrontendError> {
        let first = self.peek().clone();
        let start = first.span.start;
        let line = first.line;
        let (kind, end) = match first.kind {
            TokKind::Let => {
                self.bump();
                let (name, _) = self.ident()?;
                self.expect(TokKind::Assign, "'='")?;
                let value = self.expr()?;
                let end = self.semi()?;
                (StmtKind::Let { name, value }, end)
            }
            TokKind::If => return self.if_stmt(),
            TokKind::While => {
                self.bump();
                let cond = self.paren_expr()?;
                let body = self.block()?;
                let end = body.span.end;
                (StmtKind::While { cond, body }, end)
            }
            TokKind::For => {
                self.bump();
                self.expect(TokKind::LParen, "'('")?;
                let (var, var_tok) = self.ident()?;
                self.expect(TokKind::In, "'in'")?;
                let iter = self.expr()?;
                self.expect(TokKind::RParen, "')'")?;
                let body = self.block()?;
                let end = body.span.end;
                let header_span = var_tok.span.start..iter.span.end;
                (
                    StmtKind::For {
                        var,
                        iter,
                        header_span,
                        body,
                    },
                    end,
                )
            }
            TokKind::Return => {
                self.bump();
                let value = if self.at(&TokKind::Semi) {
                    None
                } else {
                    Some(self.expr()?)
                };
                let end = self.semi()?;
                (StmtKind::Return(value), end)
            }
            TokKind::Break => {
                self.bump();
                let end = self.semi()?;
                (StmtKind::Break, end)
            }
            TokKind::Continue => {
                self.bump();
                let end = self.semi()?;
                (StmtKind::Continue, end)
            }
            TokKind::Assert => {
                self.bump();
                let e = self.expr()?;
                let end = self.semi()?;
                (StmtKind::Assert(e), end)
            }
            _ => {
                let lhs = self.expr()?;
                let aug = match self.peek().kind {
                    TokKind::Assign => Some(None),
                    TokKind::PlusEq => Some(Some(BinOp::Add)),
                    TokKind::MinusEq => Some(Some(BinOp::Sub)),
                    TokKind::StarEq => Some(Some(BinOp::Mul)),
                    TokKind::SlashEq => Some(Some(BinOp::Div)),
                    TokKind::PercentEq => Some(Some(BinOp::Rem)),
                    _ => None,
                };
                match aug {
                    Some(op) => {
                        if !matches!(
                            lhs.kind,
                            ExprKind::Var(_) | ExprKind::Field { .. } | ExprKind::Index { .. }
                        ) {
                            return Err(FrontendError::syntax(
                                lhs.line,
                                "left side of assignment is not assignable",
                            ));
                        }
                        self.bump();
                        let value = self.expr()?;
                        let end = self.semi()?;
                        let kind = match op {
                            None => StmtKind::Assign { target: lhs, value },
                            Some(op) => StmtKind::AugAssign {
                                target: lhs,
                                op,
                                value,
                            },
                        };
                        (kind, end)
                    }
                    None => {
                        let end = self.semi()?;
                        (StmtKind::Expr(lhs), end)
                    }
                }
            }
        };
        Ok(Stmt {
            kind,
            span: start..end,
            line,
        })
    }

    fn if_stmt(&mut self) -> Result<Stmt, FrontendError> {
        let kw = self.expect(TokKind::If, "'if'")?;
        let cond = self.paren_expr()?;
        let then_block = self.block()?;
        let mut end = then_block.span.end;
        let else_branch = if self.at(&TokKind::Else) {
            self.bump();
            if self.at(&TokKind::If) {
                let nested = self.if_stmt()?;
                end = nested.span.end;
                Some(ElseBranch::If(Box::new(nested)))
            } else {
                let b = self.block()?;
                end = b.span.end;
                Some(ElseBranch::Block(b))
            }
        } else {
            None
        };
        Ok(Stmt {
            kind: StmtKind::If {
                cond,
                then_block,
                else_branch,
            },
            span: kw.span.start..end,
            line: kw.line,
        })
    }

    pub fn expr(&mut self) -> Result<Expr, FrontendError> {
        self.binary(0)
    }

    fn binop_at(&self) -> Option<(BinOp, u8)> {
        Some(match self.peek().kind {
            TokKind::OrOr => (BinOp::Or, 0),
            TokKind::AndAnd => (BinOp::And, 1),
            TokKind::EqEq => (BinOp::Eq, 2),
            TokKind::NotEq => (BinOp::Ne, 2),
            TokKind::Lt => (BinOp::Lt, 3),
            TokKind::Le => (BinOp::Le, 3),
            TokKind::Gt => (BinOp::Gt, 3),
            TokKind::Ge => (BinOp::Ge, 3),
            TokKind::Plus => (BinOp::Add, 4),
            TokKind::Minus => (BinOp::Sub, 4),
            TokKind::Star => (BinOp::Mul, 5),
            TokKind::Slash => (BinOp::Div, 5),
            TokKind::Percent => (BinOp::Rem, 5),
            _ => return None,
        })
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, FrontendError> {
        let mut lhs = self.unary()?;
        while let Some((op, prec)) = self.binop_at() {
            if prec < min_prec {
                break;
            }
            let op_tok = self.bump();
            let rhs = self.binary(prec + 1)?;
            let span = lhs.span.start..rhs.span.end;
            let line = lhs.line;
            lhs = Expr {
                kind: ExprKind::Binary {
                    op,
                    op_span: op_tok.span,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span,
                line,
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, FrontendError> {
        let op = match self.peek().kind {
            TokKind::Minus => UnOp::Neg,
            TokKind::Bang => UnOp::Not,
            _ => return self.postfix(),
        };
        let tok = self.bump();
        let operand = self.unary()?;
        let span = tok.span.start..operand.span.end;
        Ok(Expr {
            kind: ExprKind::Unary {
                op,
                op_span: tok.span,
                operand: Box::new(operand),
            },
            span,
            line: tok.line,
        })
    }

    fn postfix(&mut self) -> Result<Expr, FrontendError> {
        let mut e = self.primary()?;
        loop {
            match self.peek().kind {
                TokKind::Dot => {
                    self.bump();
                    let (name, tok) = self.ident()?;
                    let span = e.span.start..tok.span.end;
                    let line = e.line;
                    e = Expr {
                        kind: ExprKind::Field {
                            base: Box::new(e),
                            name,
                        },
                        span,
                        line,
                    };
                }
                TokKind::LBracket => {
                    self.bump();
                    let index = self.expr()?;
                    let close = self.expect(TokKind::RBracket, "']'")?;
                    let span = e.span.start..close.span.end;
                    let line = e.line;
                    e = Expr {
                        kind: ExprKind::Index {
                            base: Box::new(e),
                            index: Box::new(index),
                        },
                        span,
                        line,
                    };
                }
                _ => return Ok(e),
            }
        }
    }

    fn comma_list<T>(
        &mut self,
        close: TokKind,
        wanted: &str,
        mut elem: impl FnMut(&mut Self) -> Result<T, FrontendError>,
    ) -> Result<(Vec<T>, Token), FrontendError> {
        let mut out = Vec::new();
        if !self.at(&close) {
            loop {
                out.push(elem(self)?);
                if self.at(&TokKind::Comma) {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        let end = self.expect(close, wanted)?;
        Ok((out, end))
    }

    fn primary(&mut self) -> Result<Expr, FrontendError> {
        let tok = self.peek().clone();
        let simple = |kind| Expr {
            kind,
            span: tok.span.clone(),
            line: tok.line,
        };
        let e = match &tok.kind {
            TokKind::Int(v) => simple(ExprKind::Int(*v)),
            TokKind::Str(s) => simple(ExprKind::Str(s.clone())),
            TokKind::True => simple(ExprKind::Bool(true)),
            TokKind::False => simple(ExprKind::Bool(false)),
            TokKind::Null => simple(ExprKind::Null),
            TokKind::Ident(name) => {
                let name = name.clone();
                if self.peek_at(1) == &TokKind::LParen {
                    self.bump();
                    self.bump();
                    let (args, close) = self.comma_list(TokKind::RParen, "')'", |p| p.expr())?;
                    return Ok(Expr {
                        kind: ExprKind::Call { callee: name, args },
                        span: tok.span.start..close.span.end,
                        line: tok.line,
                    });
                }
                simple(ExprKind::Var(name))
            }
            TokKind::LParen => {
                self.bump();
                let inner = self.expr()?;
                let close = self.expect(TokKind::RParen, "')'")?;
                // Parentheses are part of the expression's extent.
                return Ok(Expr {
                    kind: inner.kind,
                    span: tok.span.start..close.span.end,
                    line: tok.line,
                });
            }
            TokKind::LBracket => {
                self.bump();
                let (elems, close) = self.comma_list(TokKind::RBracket, "']'", |p| p.expr())?;
                return Ok(Expr {
                    kind: ExprKind::List(elems),
                    span: tok.span.start..close.span.end,
                    line: tok.line,
                });
            }
            TokKind::LBrace => {
                self.bump();
                let (fields, close) = self.comma_list(TokKind::RBrace, "'}'", |p| {
                    let (name, _) = p.ident()?;
                    p.expect(TokKind::Colon, "':'")?;
                    Ok((name, p.expr()?))
                })?;
                return Ok(Expr {
                    kind: ExprKind::Record(fields),
                    span: tok.span.start..close.span.end,
                    line: tok.line,
                });
            }
            TokKind::Forall | TokKind::Exists | TokKind::NumOf | TokKind::SumOf => {
                let kind = match tok.kind {
                    TokKind::Forall => Quantifier::Forall,
                    TokKind::Exists => Quantifier::Exists,
                    TokKind::NumOf => Quantifier::NumOf,
                    _ => Quantifier::SumOf,
                };
                self.bump();
                self.expect(TokKind::LParen, "'('")?;
                let (var, _) = self.ident()?;
                self.expect(TokKind::In, "'in'")?;
                let domain = self.expr()?;
                self.expect(TokKind::Colon, "':'")?;
                let body = self.expr()?;
                let close = self.expect(TokKind::RParen, "')'")?;
                return Ok(Expr {
                    kind: ExprKind::Quant {
                        kind,
                        var,
                        domain: Box::new(domain),
                        body: Box::new(body),
                    },
                    span: tok.span.start..close.span.end,
                    line: tok.line,
                });
            }
            _ => return Err(self.unexpected("expression")),
        };
        self.bump();
        Ok(e)
    }
}
