//! Tokenizer for the bundled fixture language.

use std::ops::Range;

use super::FrontendError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokKind {
    Int(i64),
    Str(String),
    Ident(String),
    // keywords
    Fn,
    Test,
    Let,
    If,
    Else,
    While,
    For,
    In,
    Return,
    Break,
    Continue,
    Assert,
    True,
    False,
    Null,
    Forall,
    Exists,
    NumOf,
    SumOf,
    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Dot,
    // operators
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    AndAnd,
    OrOr,
    Bang,
    Assign,
    PlusEq,
    MinusEq,
    StarEq,
    SlashEq,
    PercentEq,
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub kind: TokKind,
    pub span: Range<usize>,
    pub line: usize,
    /// Byte range of the `///` block immediately preceding this token, if any.
    pub doc: Option<Range<usize>>,
}

fn keyword(word: &str) -> Option<TokKind> {
    Some(match word {
        "fn" => TokKind::Fn,
        "test" => TokKind::Test,
        "let" => TokKind::Let,
        "if" => TokKind::If,
        "else" => TokKind::Else,
        "while" => TokKind::While,
        "for" => TokKind::For,
        "in" => TokKind::In,
        "return" => TokKind::Return,
        "break" => TokKind::Break,
        "continue" => TokKind::Continue,
        "assert" => TokKind::Assert,
        "true" => TokKind::True,
        "false" => TokKind::False,
        "null" => TokKind::Null,
        "forall" => TokKind::Forall,
        "exists" => TokKind::Exists,
        "num_of" => TokKind::NumOf,
        "sum_of" => TokKind::SumOf,
        _ => return None,
    })
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, FrontendError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut pending_doc: Option<Range<usize>> = None;

    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            let end = text[i..].find('\n').map_or(bytes.len(), |off| i + off);
            let is_doc = bytes.get(i + 2) == Some(&b'/') && bytes.get(i + 3) != Some(&b'/');
            if is_doc {
                pending_doc = Some(match pending_doc.take() {
                    Some(prev) => prev.start..end,
                    None => i..end,
                });
            } else {
                pending_doc = None;
            }
            i = end;
            continue;
        }

        let start = i;
        let start_line = line;
        let kind = if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                return Err(FrontendError::syntax(line, "malformed number literal"));
            }
            let value: i64 = text[start..i]
                .parse()
                .map_err(|_| FrontendError::syntax(line, "integer literal out of range"))?;
            TokKind::Int(value)
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &text[start..i];
            keyword(word).unwrap_or_else(|| TokKind::Ident(word.to_string()))
        } else if c == b'"' {
            i += 1;
            let mut value = String::new();
            loop {
                let Some(&b) = bytes.get(i) else {
                    return Err(FrontendError::syntax(start_line, "unterminated string literal"));
                };
                match b {
                    b'"' => {
                        i += 1;
                        break;
                    }
                    b'\n' => {
                        return Err(FrontendError::syntax(start_line, "unterminated string literal"))
                    }
                    b'\\' => {
                        let esc = bytes.get(i + 1).copied();
                        value.push(match esc {
                            Some(b'n') => '\n',
                            Some(b't') => '\t',
                            Some(b'"') => '"',
                            Some(b'\\') => '\\',
                            _ => return Err(FrontendError::syntax(line, "invalid escape sequence")),
                        });
                        i += 2;
                    }
                    _ => {
                        let ch = text[i..].chars().next().expect("char boundary");
                        value.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            TokKind::Str(value)
        } else {
            let two = bytes.get(i + 1).copied();
            let (kind, len) = match (c, two) {
                (b'=', Some(b'=')) => (TokKind::EqEq, 2),
                (b'!', Some(b'=')) => (TokKind::NotEq, 2),
                (b'<', Some(b'=')) => (TokKind::Le, 2),
                (b'>', Some(b'=')) => (TokKind::Ge, 2),
                (b'&', Some(b'&')) => (TokKind::AndAnd, 2),
                (b'|', Some(b'|')) => (TokKind::OrOr, 2),
                (b'+', Some(b'=')) => (TokKind::PlusEq, 2),
                (b'-', Some(b'=')) => (TokKind::MinusEq, 2),
                (b'*', Some(b'=')) => (TokKind::StarEq, 2),
                (b'/', Some(b'=')) => (TokKind::SlashEq, 2),
                (b'%', Some(b'=')) => (TokKind::PercentEq, 2),
                (b'(', _) => (TokKind::LParen, 1),
                (b')', _) => (TokKind::RParen, 1),
                (b'{', _) => (TokKind::LBrace, 1),
                (b'}', _) => (TokKind::RBrace, 1),
                (b'[', _) => (TokKind::LBracket, 1),
                (b']', _) => (TokKind::RBracket, 1),
                (b',', _) => (TokKind::Comma, 1),
                (b';', _) => (TokKind::Semi, 1),
                (b':', _) => (TokKind::Colon, 1),
                (b'.', _) => (TokKind::Dot, 1),
                (b'+', _) => (TokKind::Plus, 1),
                (b'-', _) => (TokKind::Minus, 1),
                (b'*', _) => (TokKind::Star, 1),
                (b'/', _) => (TokKind::Slash, 1),
                (b'%', _) => (TokKind::Percent, 1),
                (b'<', _) => (TokKind::Lt, 1),
                (b'>', _) => (TokKind::Gt, 1),
                (b'!', _) => (TokKind::Bang, 1),
                (b'=', _) => (TokKind::Assign, 1),
                _ => {
                    let ch = text[i..].chars().next().expect("char boundary");
                    return Err(FrontendError::syntax(line, format!("unexpected character {ch:?}")));
                }
            };
            i += len;
            kind
        };
        toks.push(Token {
            kind,
            span: start..i,
            line: start_line,
            doc: pending_doc.take(),
        });
    }
    toks.push(Token {
        kind: TokKind::Eof,
        span: bytes.len()..bytes.len(),
        line,
        doc: pending_doc.take(),
    });
    Ok(toks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doc_comment_attaches_to_next_token() {
        let text = "/// hello there\n/// again\nfn f() {}";
        let toks = tokenize(text).unwrap();
        let doc = toks[0].doc.clone().unwrap();
        assert_eq!(&text[doc], "/// hello there\n/// again");
    }

    #[test]
    fn plain_comment_breaks_doc_block() {
        let toks = tokenize("/// doc\n// plain\nfn f() {}").unwrap();
        assert!(toks[0].doc.is_none());
    }

    #[test]
    fn two_char_operators() {
        let toks = tokenize("a <= b && c != d").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.kind.clone()).collect();
        assert_eq!(kinds[1], TokKind::Le);
        assert_eq!(kinds[3], TokKind::AndAnd);
        assert_eq!(kinds[5], TokKind::NotEq);
    }

    #[test]
    fn unterminated_string_reports_line() {
        let err = tokenize("\n\n\"abc").unwrap_err();
        assert!(matches!(err, FrontendError::Syntax { line: 3, .. }));
    }
}
