//! Hand-rolled lexer. Produces a flat token stream with line/column spans;
//! `#` starts a comment that runs to end of line.

use super::FrontendError;
use std::fmt;

/// Half-open region of source text, 1-based line and column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SourceSpan {
    pub line: u32,
    pub col: u32,
    pub len: u32,
}

impl SourceSpan {
    pub fn new(line: u32, col: u32, len: u32) -> Self {
        SourceSpan { line, col, len }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(u64),
    Float(f64),
    KwMatrix,
    KwVector,
    KwScalar,
    KwFor,
    KwIn,
    KwInv,
    KwDiag,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Colon,
    Assign, // :=
    Eq,     // =
    Plus,
    Minus,
    Star,
    Tick, // ' (transpose)
    Eof,
}

impl Tok {
    /// Short description used in error messages.
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(n) => format!("integer `{n}`"),
            Tok::Float(v) => format!("number `{v}`"),
            Tok::KwMatrix => "`matrix`".into(),
            Tok::KwVector => "`vector`".into(),
            Tok::KwScalar => "`scalar`".into(),
            Tok::KwFor => "`for`".into(),
            Tok::KwIn => "`in`".into(),
            Tok::KwInv => "`inv`".into(),
            Tok::KwDiag => "`diag`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Assign => "`:=`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Tick => "`'`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub kind: Tok,
    pub span: SourceSpan,
}

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }
}

/// Tokenizes `src`. The returned stream always ends with a single
/// [`Tok::Eof`] token.
pub fn lex(src: &str) -> Result<Vec<Token>, FrontendError> {
    let mut cur = Cursor {
        src: src.as_bytes(),
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();

    while let Some(c) = cur.peek() {
        let (line, col) = (cur.line, cur.col);
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                cur.bump();
            }
            b'#' => {
                while let Some(c) = cur.peek() {
                    if c == b'\n' {
                        break;
                    }
                    cur.bump();
                }
            }
            b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                let start = cur.pos;
                while let Some(c) = cur.peek() {
                    if c.is_ascii_alphanumeric() || c == b'_' {
                        cur.bump();
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&cur.src[start..cur.pos]).expect("ascii ident");
                let kind = match text {
                    "matrix" => Tok::KwMatrix,
                    "vector" => Tok::KwVector,
                    "scalar" => Tok::KwScalar,
                    "for" => Tok::KwFor,
                    "in" => Tok::KwIn,
                    "inv" => Tok::KwInv,
                    "diag" => Tok::KwDiag,
                    _ => Tok::Ident(text.to_string()),
                };
                out.push(Token {
                    kind,
                    span: SourceSpan::new(line, col, (cur.pos - start) as u32),
                });
            }
            b'0'..=b'9' => {
                let start = cur.pos;
                let mut is_float = false;
                while matches!(cur.peek(), Some(b'0'..=b'9')) {
                    cur.bump();
                }
                // A '.' is part of the number only when followed by a digit,
                // so selectors like `1` before `]` never over-consume.
                if cur.peek() == Some(b'.')
                    && matches!(cur.src.get(cur.pos + 1), Some(b'0'..=b'9'))
                {
                    is_float = true;
                    cur.bump();
                    while matches!(cur.peek(), Some(b'0'..=b'9')) {
                        cur.bump();
                    }
                }
                if matches!(cur.peek(), Some(b'e') | Some(b'E')) {
                    let mut look = cur.pos + 1;
                    if matches!(cur.src.get(look), Some(b'+') | Some(b'-')) {
                        look += 1;
                    }
                    if matches!(cur.src.get(look), Some(b'0'..=b'9')) {
                        is_float = true;
                        cur.bump(); // e
                        if matches!(cur.peek(), Some(b'+') | Some(b'-')) {
                            cur.bump();
                        }
                        while matches!(cur.peek(), Some(b'0'..=b'9')) {
                            cur.bump();
                        }
                    }
                }
                let text = std::str::from_utf8(&cur.src[start..cur.pos]).expect("ascii number");
                let span = SourceSpan::new(line, col, (cur.pos - start) as u32);
                let kind = if is_float {
                    Tok::Float(text.parse::<f64>().map_err(|_| FrontendError::Syntax {
                        span,
                        message: format!("invalid numeric literal `{text}`"),
                    })?)
                } else {
                    Tok::Int(text.parse::<u64>().map_err(|_| FrontendError::Syntax {
                        span,
                        message: format!("integer literal `{text}` out of range"),
                    })?)
                };
                out.push(Token { kind, span });
            }
            _ => {
                cur.bump();
                let span1 = SourceSpan::new(line, col, 1);
                let kind = match c {
                    b'(' => Tok::LParen,
                    b')' => Tok::RParen,
                    b'[' => Tok::LBracket,
                    b']' => Tok::RBracket,
                    b'{' => Tok::LBrace,
                    b'}' => Tok::RBrace,
                    b',' => Tok::Comma,
                    b';' => Tok::Semi,
                    b'+' => Tok::Plus,
                    b'-' => Tok::Minus,
                    b'*' => Tok::Star,
                    b'\'' => Tok::Tick,
                    b'=' => Tok::Eq,
                    b':' => {
                        if cur.peek() == Some(b'=') {
                            cur.bump();
                            out.push(Token {
                                kind: Tok::Assign,
                                span: SourceSpan::new(line, col, 2),
                            });
                            continue;
                        }
                        Tok::Colon
                    }
                    other => {
                        return Err(FrontendError::Syntax {
                            span: span1,
                            message: format!("unexpected character `{}`", other as char),
                        })
                    }
                };
                out.push(Token { kind, span: span1 });
            }
        }
    }

    out.push(Token {
        kind: Tok::Eof,
        span: SourceSpan::new(cur.line, cur.col, 0),
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        lex(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn lexes_declaration_line() {
        assert_eq!(
            kinds("matrix A(4, 4): spd"),
            vec![
                Tok::KwMatrix,
                Tok::Ident("A".into()),
                Tok::LParen,
                Tok::Int(4),
                Tok::Comma,
                Tok::Int(4),
                Tok::RParen,
                Tok::Colon,
                Tok::Ident("spd".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn assign_vs_colon() {
        assert_eq!(
            kinds("x := 1:2"),
            vec![
                Tok::Ident("x".into()),
                Tok::Assign,
                Tok::Int(1),
                Tok::Colon,
                Tok::Int(2),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn numbers_and_floats() {
        assert_eq!(
            kinds("2 2.5 1e3 3.0e-2"),
            vec![
                Tok::Int(2),
                Tok::Float(2.5),
                Tok::Float(1000.0),
                Tok::Float(0.03),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn element_selector_does_not_eat_bracket() {
        // `A[1,2]` must lex `1` and `2` as integers, not a float `1,2`.
        assert_eq!(
            kinds("A[1,2]'"),
            vec![
                Tok::Ident("A".into()),
                Tok::LBracket,
                Tok::Int(1),
                Tok::Comma,
                Tok::Int(2),
                Tok::RBracket,
                Tok::Tick,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn comments_are_skipped() {
        assert_eq!(
            kinds("x := y # trailing words * ' [\n z"),
            vec![
                Tok::Ident("x".into()),
                Tok::Assign,
                Tok::Ident("y".into()),
                Tok::Ident("z".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn spans_track_lines_and_columns() {
        let toks = lex("ab\n  cd").unwrap();
        assert_eq!(toks[0].span, SourceSpan::new(1, 1, 2));
        assert_eq!(toks[1].span, SourceSpan::new(2, 3, 2));
    }

    #[test]
    fn rejects_unknown_character() {
        let err = lex("x := y @ z").unwrap_err();
        assert_eq!(err.span(), SourceSpan::new(1, 8, 1));
    }

    #[test]
    fn ident_followed_by_exponent_like_suffix() {
        // `1e` with no digits is an integer then an identifier.
        assert_eq!(
            kinds("1e"),
            vec![Tok::Int(1), Tok::Ident("e".into()), Tok::Eof]
        );
    }
}
