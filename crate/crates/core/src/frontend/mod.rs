//! Surface language for dense linear algebra programs.
//!
//! A program is a sequence of declarations and statements:
//!
//! ```text
//! matrix A(1000, 1000)
//! matrix B(1000, 1000): spd
//! vector y(1000)
//! scalar lambda = 0.7
//!
//! x := inv(B) * A' * y
//! for i in 1:4 { s[i,1] := A[i,i] }
//! ```
//!
//! [`parse_program`] lexes, parses, shape-checks and canonicalizes the input;
//! the result is ready for the rewrite passes and lowering. [`format_program`]
//! prints a checked program back to source text; parsing that text again
//! yields the same tree.

mod lexer;
mod parser;
mod printer;

pub use lexer::{lex, SourceSpan, Tok, Token};
pub use parser::parse_program;
pub use printer::{format_expr, format_program};

use crate::ir::IrError;
use thiserror::Error;

/// Errors produced while turning source text into a checked program. Every
/// variant carries the source location it refers to.
#[derive(Debug, Error, PartialEq)]
pub enum FrontendError {
    #[error("syntax error at {span}: {message}")]
    Syntax { span: SourceSpan, message: String },
    #[error("undeclared operand `{name}` at {span}")]
    Undeclared { name: String, span: SourceSpan },
    /// A statement or declaration parsed but failed validation (dimension
    /// conformance, property consistency, selector bounds, ...).
    #[error("{err} at {span}")]
    Check { err: IrError, span: SourceSpan },
}

impl FrontendError {
    pub fn span(&self) -> SourceSpan {
        match self {
            FrontendError::Syntax { span, .. }
            | FrontendError::Undeclared { span, .. }
            | FrontendError::Check { span, .. } => *span,
        }
    }
}
