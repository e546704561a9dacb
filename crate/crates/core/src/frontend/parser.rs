//! Recursive-descent parser producing a checked, canonicalized
//! [`Program`].
//!
//! Grammar (declarations must precede use):
//!
//! ```text
//! program  := (decl | stmt)*
//! decl     := "matrix" NAME "(" INT "," INT ")" (":" prop ("," prop)*)?
//!           | "vector" NAME "(" INT ")"
//!           | "scalar" NAME ("=" ("-")? NUMBER)?
//! stmt     := lhs ":=" expr
//!           | "for" NAME "in" bound ":" bound "{" stmt* "}"
//! lhs      := NAME | NAME "[" sel "]" | NAME "[" sel "," sel "]"
//! expr     := ("-")? term (("+" | "-") term)*
//! term     := factor ("*" factor)*
//! factor   := atom ("'" | "[" sel "," sel "]" | "[" ":" "," sel "]")*
//! atom     := NAME | NUMBER | "(" expr ")" | "inv" "(" expr ")"
//!           | "diag" "(" expr ")" | "[" expr ("," expr)* (";" ...)* "]"
//! sel      := INT | NAME          (loop index)
//! bound    := INT | NAME          (declared scalar with integer value)
//! ```
//!
//! Numeric literals and declared scalar operands multiply into a single
//! coefficient per term; a bare `0` denotes a zero block whose shape is
//! inferred from context.

use super::lexer::{lex, SourceSpan, Tok, Token};
use super::FrontendError;
use crate::ir::{
    check_program, Bound, Coeff, Decl, DeclKind, Expr, IrError, Lhs, Program, PropertySet,
    Selector, Shape, Sign, Stmt,
};

/// Parses, checks and canonicalizes a source program.
pub fn parse_program(src: &str) -> Result<Program, FrontendError> {
    let toks = lex(src)?;
    let eof_span = toks.last().expect("eof token").span;
    let mut parser = Parser { toks, pos: 0, program: Program::default() };
    parser.parse_all()?;
    // Every declaration and statement was already validated incrementally,
    // so this final pass only performs the canonicalization.
    check_program(parser.program).map_err(|err| wrap_ir(err, eof_span))
}

fn wrap_ir(err: IrError, span: SourceSpan) -> FrontendError {
    match err {
        IrError::Undeclared { name } => FrontendError::Undeclared { name, span },
        other => FrontendError::Check { err: other, span },
    }
}

/// A multiplicative factor: either a scalar coefficient (numeric literal or
/// declared scalar symbol) or a matrix-valued expression.
enum Factor {
    Coeff(Coeff),
    Mat(Expr),
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    program: Program,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].kind
    }

    fn peek_span(&self) -> SourceSpan {
        self.toks[self.pos].span
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: &Tok) -> bool {
        if self.peek() == kind {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: Tok) -> Result<Token, FrontendError> {
        if self.peek() == &kind {
            Ok(self.advance())
        } else {
            Err(self.err_here(format!(
                "expected {}, found {}",
                kind.describe(),
                self.peek().describe()
            )))
        }
    }

    fn expect_ident(&mut self) -> Result<(String, SourceSpan), FrontendError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                let span = self.advance().span;
                Ok((name, span))
            }
            other => Err(self.err_here(format!("expected a name, found {}", other.describe()))),
        }
    }

    fn err_here(&self, message: String) -> FrontendError {
        FrontendError::Syntax { span: self.peek_span(), message }
    }

    /// Re-validates the program after appending a declaration or statement so
    /// errors point at the construct that introduced them.
    fn recheck(&self, span: SourceSpan) -> Result<(), FrontendError> {
        check_program(self.program.clone())
            .map(|_| ())
            .map_err(|err| wrap_ir(err, span))
    }

    fn parse_all(&mut self) -> Result<(), FrontendError> {
        loop {
            match self.peek() {
                Tok::Eof => return Ok(()),
                Tok::KwMatrix | Tok::KwVector | Tok::KwScalar => self.parse_decl()?,
                Tok::KwFor | Tok::Ident(_) => {
                    let span = self.peek_span();
                    let stmt = self.parse_stmt()?;
                    self.program.stmts.push(stmt);
                    self.recheck(span)?;
                }
                other => {
                    return Err(self.err_here(format!(
                        "expected a declaration or statement, found {}",
                        other.describe()
                    )))
                }
            }
        }
    }

    fn parse_decl(&mut self) -> Result<(), FrontendError> {
        let kw = self.advance();
        let (name, _) = self.expect_ident()?;
        let decl = match kw.kind {
            Tok::KwMatrix => {
                self.expect(Tok::LParen)?;
                let rows = self.expect_dim()?;
                self.expect(Tok::Comma)?;
                let cols = self.expect_dim()?;
                self.expect(Tok::RParen)?;
                let props = if self.eat(&Tok::Colon) {
                    self.parse_props()?
                } else {
                    PropertySet::FULL
                };
                Decl {
                    name,
                    shape: Shape::new(rows, cols),
                    props,
                    value: None,
                    kind: DeclKind::Matrix,
                }
            }
            Tok::KwVector => {
                self.expect(Tok::LParen)?;
                let rows = self.expect_dim()?;
                self.expect(Tok::RParen)?;
                Decl {
                    name,
                    shape: Shape::new(rows, 1),
                    props: PropertySet::FULL,
                    value: None,
                    kind: DeclKind::Vector,
                }
            }
            Tok::KwScalar => {
                let value = if self.eat(&Tok::Eq) {
                    let neg = self.eat(&Tok::Minus);
                    let v = self.expect_number()?;
                    Some(if neg { -v } else { v })
                } else {
                    None
                };
                Decl {
                    name,
                    shape: Shape::new(1, 1),
                    props: PropertySet::FULL,
                    value,
                    kind: DeclKind::Scalar,
                }
            }
            _ => unreachable!("caller checked the keyword"),
        };
        self.program
            .decls
            .push(decl)
            .map_err(|err| wrap_ir(err, kw.span))?;
        self.recheck(kw.span)
    }

    fn expect_dim(&mut self) -> Result<usize, FrontendError> {
        match *self.peek() {
            Tok::Int(n) if n > 0 => {
                self.advance();
                Ok(n as usize)
            }
            ref other => Err(self.err_here(format!(
                "expected a positive integer dimension, found {}",
                other.describe()
            ))),
        }
    }

    fn expect_number(&mut self) -> Result<f64, FrontendError> {
        match *self.peek() {
            Tok::Int(n) => {
                self.advance();
                Ok(n as f64)
            }
            Tok::Float(v) => {
                self.advance();
                Ok(v)
            }
            ref other => Err(self.err_here(format!(
                "expected a numeric literal, found {}",
                other.describe()
            ))),
        }
    }

    fn parse_props(&mut self) -> Result<PropertySet, FrontendError> {
        let mut props = PropertySet::FULL;
        loop {
            let (name, span) = self.expect_ident()?;
            match PropertySet::from_name(&name) {
                Some(p) => props = props.union(p),
                None => {
                    let known: Vec<&str> = PropertySet::ALL.iter().map(|(_, n)| *n).collect();
                    return Err(FrontendError::Syntax {
                        span,
                        message: format!(
                            "unknown property `{}` (expected one of: {})",
                            name,
                            known.join(", ")
                        ),
                    });
                }
            }
            if !self.eat(&Tok::Comma) {
                return Ok(props);
            }
        }
    }

    fn parse_stmt(&mut self) -> Result<Stmt, FrontendError> {
        if self.peek() == &Tok::KwFor {
            return self.parse_for();
        }
        let (name, _) = self.expect_ident()?;
        let lhs = if self.eat(&Tok::LBracket) {
            let row = self.parse_selector()?;
            let col = if self.eat(&Tok::Comma) {
                Some(self.parse_selector()?)
            } else {
                None
            };
            self.expect(Tok::RBracket)?;
            Lhs::Elem { name, row, col }
        } else {
            Lhs::Var(name)
        };
        self.expect(Tok::Assign)?;
        let expr = self.parse_expr()?;
        Ok(Stmt::Assign { lhs, expr })
    }

    fn parse_for(&mut self) -> Result<Stmt, FrontendError> {
        self.expect(Tok::KwFor)?;
        let (index, _) = self.expect_ident()?;
        self.expect(Tok::KwIn)?;
        let lo = self.parse_bound()?;
        self.expect(Tok::Colon)?;
        let hi = self.parse_bound()?;
        self.expect(Tok::LBrace)?;
        let mut body = Vec::new();
        while !self.eat(&Tok::RBrace) {
            match self.peek() {
                Tok::Ident(_) | Tok::KwFor => body.push(self.parse_stmt()?),
                other => {
                    return Err(self.err_here(format!(
                        "expected a statement or `}}` in loop body, found {}",
                        other.describe()
                    )))
                }
            }
        }
        Ok(Stmt::For { index, lo, hi, body })
    }

    fn parse_bound(&mut self) -> Result<Bound, FrontendError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.advance();
                Ok(Bound::Lit(n))
            }
            Tok::Ident(name) => {
                self.advance();
                Ok(Bound::Sym(name))
            }
            other => Err(self.err_here(format!(
                "expected a loop bound (integer or scalar name), found {}",
                other.describe()
            ))),
        }
    }

    fn parse_selector(&mut self) -> Result<Selector, FrontendError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.advance();
                Ok(Selector::Lit(n as usize))
            }
            Tok::Ident(name) => {
                self.advance();
                Ok(Selector::Sym(name))
            }
            other => Err(self.err_here(format!(
                "expected a selector (integer or loop index), found {}",
                other.describe()
            ))),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, FrontendError> {
        let mut sign = if self.eat(&Tok::Minus) { Sign::Minus } else { Sign::Plus };
        let mut terms = Vec::new();
        loop {
            terms.push((sign, self.parse_term()?));
            if self.eat(&Tok::Plus) {
                sign = Sign::Plus;
            } else if self.eat(&Tok::Minus) {
                sign = Sign::Minus;
            } else {
                break;
            }
        }
        if terms.len() == 1 && terms[0].0 == Sign::Plus {
            Ok(terms.pop().expect("one term").1)
        } else {
            Ok(Expr::Sum(terms))
        }
    }

    fn parse_term(&mut self) -> Result<Expr, FrontendError> {
        let span = self.peek_span();
        let mut coeff = Coeff::one();
        let mut mats = Vec::new();
        loop {
            match self.parse_factor()? {
                Factor::Coeff(c) => coeff = coeff.mul(&c),
                Factor::Mat(e) => mats.push(e),
            }
            if !self.eat(&Tok::Star) {
                break;
            }
        }
        if mats.is_empty() {
            return if coeff.lit == 0.0 && coeff.syms.is_empty() {
                Ok(Expr::Zero(None))
            } else if coeff.lit == 1.0 && coeff.syms.len() == 1 {
                // A lone scalar symbol is an ordinary 1x1 operand reference.
                Ok(Expr::operand(&coeff.syms[0]))
            } else {
                Err(FrontendError::Syntax {
                    span,
                    message: "a scalar-only term must be `0`, a single scalar name, or \
                              multiply a matrix factor"
                        .into(),
                })
            };
        }
        let base = if mats.len() == 1 {
            mats.pop().expect("one factor")
        } else {
            Expr::Product(mats)
        };
        Ok(if coeff.is_one() {
            base
        } else {
            Expr::ScalarMul(coeff, Box::new(base))
        })
    }

    fn parse_factor(&mut self) -> Result<Factor, FrontendError> {
        let mut f = self.parse_atom()?;
        loop {
            if self.eat(&Tok::Tick) {
                f = match f {
                    // Transposing a scalar is the identity.
                    Factor::Coeff(c) => Factor::Coeff(c),
                    Factor::Mat(e) => Factor::Mat(e.transpose()),
                };
            } else if self.peek() == &Tok::LBracket {
                let span = self.peek_span();
                self.advance();
                let e = match f {
                    Factor::Mat(e) => e,
                    Factor::Coeff(_) => {
                        return Err(FrontendError::Syntax {
                            span,
                            message: "cannot index a scalar value".into(),
                        })
                    }
                };
                if self.eat(&Tok::Colon) {
                    self.expect(Tok::Comma)?;
                    let col = self.parse_selector()?;
                    self.expect(Tok::RBracket)?;
                    f = Factor::Mat(Expr::Column(Box::new(e), col));
                } else {
                    let row = self.parse_selector()?;
                    self.expect(Tok::Comma)?;
                    let col = self.parse_selector()?;
                    self.expect(Tok::RBracket)?;
                    f = Factor::Mat(Expr::Element(Box::new(e), row, col));
                }
            } else {
                return Ok(f);
            }
        }
    }

    fn parse_atom(&mut self) -> Result<Factor, FrontendError> {
        let span = self.peek_span();
        match self.peek().clone() {
            Tok::KwInv => {
                self.advance();
                self.expect(Tok::LParen)?;
                let e = self.parse_expr()?;
                self.expect(Tok::RParen)?;
                Ok(Factor::Mat(e.inverse()))
            }
            Tok::KwDiag => {
                self.advance();
                self.expect(Tok::LParen)?;
                let e = self.parse_expr()?;
                self.expect(Tok::RParen)?;
                Ok(Factor::Mat(Expr::Diag(Box::new(e))))
            }
            Tok::LParen => {
                self.advance();
                let e = self.parse_expr()?;
                self.expect(Tok::RParen)?;
                // `(s)` for a declared scalar still acts as a coefficient.
                Ok(self.rescalar(e))
            }
            Tok::LBracket => {
                self.advance();
                let mut rows = Vec::new();
                loop {
                    let mut row = vec![self.parse_expr()?];
                    while self.eat(&Tok::Comma) {
                        row.push(self.parse_expr()?);
                    }
                    rows.push(row);
                    if !self.eat(&Tok::Semi) {
                        break;
                    }
                }
                self.expect(Tok::RBracket)?;
                Ok(Factor::Mat(Expr::Block(rows)))
            }
            Tok::Int(n) => {
                self.advance();
                Ok(Factor::Coeff(Coeff::lit(n as f64)))
            }
            Tok::Float(v) => {
                self.advance();
                Ok(Factor::Coeff(Coeff::lit(v)))
            }
            Tok::Ident(name) => {
                self.advance();
                match self.program.decls.get(&name) {
                    Some(d) if d.shape.is_scalar() => Ok(Factor::Coeff(Coeff::sym(&name))),
                    Some(_) => Ok(Factor::Mat(Expr::operand(&name))),
                    None => Err(FrontendError::Undeclared { name, span }),
                }
            }
            other => Err(self.err_here(format!(
                "expected an expression, found {}",
                other.describe()
            ))),
        }
    }

    fn rescalar(&self, e: Expr) -> Factor {
        if let Expr::Operand(n) = &e {
            if let Some(d) = self.program.decls.get(n) {
                if d.shape.is_scalar() {
                    return Factor::Coeff(Coeff::sym(n));
                }
            }
        }
        Factor::Mat(e)
    }
}
