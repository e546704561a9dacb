//! Pretty-printer for checked programs.
//!
//! [`format_program`] emits source text that parses back to a structurally
//! identical tree (canonical trees only contain constructs the grammar can
//! express, except the pass-internal submatrix view, which prints in a
//! readable but non-parseable form).

use crate::ir::{Bound, Decl, DeclKind, Expr, Lhs, Program, PropertySet, Sign, Stmt};
use std::fmt::Write as _;

/// Prints a whole program: declarations, a blank line, then statements.
pub fn format_program(p: &Program) -> String {
    let mut out = String::new();
    for d in p.decls.iter() {
        out.push_str(&decl_line(d));
        out.push('\n');
    }
    if !p.decls.is_empty() && !p.stmts.is_empty() {
        out.push('\n');
    }
    for s in &p.stmts {
        stmt_lines(s, 0, &mut out);
    }
    out
}

/// Prints one expression (lowest-precedence context).
pub fn format_expr(e: &Expr) -> String {
    fmt(e, Ctx::Expr)
}

fn decl_line(d: &Decl) -> String {
    match d.kind {
        DeclKind::Scalar => match d.value {
            Some(v) => format!("scalar {} = {}", d.name, v),
            None => format!("scalar {}", d.name),
        },
        // Vectors carry no property clause in the grammar; a (rare) temporary
        // vector with properties prints as an n-by-1 matrix instead.
        DeclKind::Vector if d.props.is_full() => format!("vector {}({})", d.name, d.shape.rows),
        _ => {
            let mut line = format!("matrix {}({}, {})", d.name, d.shape.rows, d.shape.cols);
            if !d.props.is_full() {
                let _ = write!(line, ": {}", generators(d.props).join(", "));
            }
            line
        }
    }
}

/// Smallest set of property names whose closure reproduces `props`
/// (e.g. the closed spd set prints as just `spd`).
fn generators(props: PropertySet) -> Vec<&'static str> {
    let mut flags: Vec<(PropertySet, &'static str)> = PropertySet::ALL
        .iter()
        .filter(|(f, _)| props.contains(*f))
        .copied()
        .collect();
    // Consider the most implicative flags first so implied ones drop out.
    flags.sort_by_key(|(f, _)| std::cmp::Reverse(PropertySet::new(*f).names().len()));
    let mut picked = Vec::new();
    let mut covered = PropertySet::FULL;
    for (f, name) in flags {
        if !covered.contains(f) {
            covered = covered.union(PropertySet::new(f));
            picked.push(name);
        }
    }
    // Report in declaration-table order for stable output.
    let mut out: Vec<&'static str> = Vec::new();
    for (_, name) in PropertySet::ALL {
        if picked.contains(&name) {
            out.push(name);
        }
    }
    out
}

fn stmt_lines(s: &Stmt, depth: usize, out: &mut String) {
    let pad = "    ".repeat(depth);
    match s {
        Stmt::Assign { lhs, expr } => {
            let target = match lhs {
                Lhs::Var(n) => n.clone(),
                Lhs::Elem { name, row, col: None } => format!("{name}[{row}]"),
                Lhs::Elem { name, row, col: Some(c) } => format!("{name}[{row},{c}]"),
            };
            let _ = writeln!(out, "{pad}{target} := {}", fmt(expr, Ctx::Expr));
        }
        Stmt::For { index, lo, hi, body } => {
            let _ = writeln!(out, "{pad}for {index} in {}:{} {{", bound_str(lo), bound_str(hi));
            for inner in body {
                stmt_lines(inner, depth + 1, out);
            }
            let _ = writeln!(out, "{pad}}}");
        }
    }
}

fn bound_str(b: &Bound) -> String {
    b.to_string()
}

/// Syntactic context of the node being printed, tightest last.
#[derive(Clone, Copy, PartialEq)]
enum Ctx {
    /// Sum level: nothing needs parentheses.
    Expr,
    /// Term of a sum: nested sums need parentheses, products do not.
    Term,
    /// Factor in a product: sums, products, and coefficients all need them.
    Factor,
    /// Base of a postfix `'` or `[...]`: everything compound needs them.
    Postfix,
}

/// Whether a product-shaped expression needs parentheses in `ctx`.
fn product_wraps(ctx: Ctx) -> bool {
    matches!(ctx, Ctx::Factor | Ctx::Postfix)
}

fn fmt(e: &Expr, ctx: Ctx) -> String {
    match e {
        Expr::Operand(n) => n.clone(),
        Expr::Zero(_) => "0".into(),
        Expr::Inverse(x) => format!("inv({})", fmt(x, Ctx::Expr)),
        Expr::Diag(x) => format!("diag({})", fmt(x, Ctx::Expr)),
        Expr::Transpose(x) => format!("{}'", fmt(x, Ctx::Postfix)),
        Expr::Element(x, r, c) => format!("{}[{r},{c}]", fmt(x, Ctx::Postfix)),
        Expr::Column(x, c) => format!("{}[:,{c}]", fmt(x, Ctx::Postfix)),
        Expr::Block(grid) => {
            let rows: Vec<String> = grid
                .iter()
                .map(|row| {
                    row.iter().map(|c| fmt(c, Ctx::Expr)).collect::<Vec<_>>().join(", ")
                })
                .collect();
            format!("[{}]", rows.join("; "))
        }
        Expr::Product(fs) => {
            let body = fs.iter().map(|f| fmt(f, Ctx::Factor)).collect::<Vec<_>>().join(" * ");
            wrap(body, product_wraps(ctx))
        }
        Expr::ScalarMul(c, x) => {
            let mut parts: Vec<String> = Vec::new();
            if !(c.lit == 1.0 && !c.syms.is_empty()) {
                parts.push(format!("{}", c.lit));
            }
            parts.extend(c.syms.iter().cloned());
            // The matrix tail merges into the coefficient's `*` chain, so it
            // prints at term level (the parser folds scalars back out).
            let body = format!("{} * {}", parts.join(" * "), fmt(x, Ctx::Term));
            wrap(body, product_wraps(ctx))
        }
        Expr::Sum(terms) => {
            let mut body = String::new();
            for (i, (sign, t)) in terms.iter().enumerate() {
                match (i, sign) {
                    (0, Sign::Plus) => {}
                    (0, Sign::Minus) => body.push('-'),
                    (_, Sign::Plus) => body.push_str(" + "),
                    (_, Sign::Minus) => body.push_str(" - "),
                }
                body.push_str(&fmt(t, Ctx::Term));
            }
            wrap(body, ctx != Ctx::Expr)
        }
        Expr::Solve { a, b, side } => {
            let inv = format!("inv({})", fmt(a, Ctx::Expr));
            let body = match side {
                crate::ir::Side::Left => format!("{inv} * {}", fmt(b, Ctx::Factor)),
                crate::ir::Side::Right => format!("{} * {inv}", fmt(b, Ctx::Factor)),
            };
            wrap(body, product_wraps(ctx))
        }
        Expr::Syrk { a, trans } => {
            let base = fmt(a, Ctx::Factor);
            let tick = format!("{}'", fmt(a, Ctx::Postfix));
            let body = if *trans {
                format!("{tick} * {base}")
            } else {
                format!("{base} * {tick}")
            };
            wrap(body, product_wraps(ctx))
        }
        Expr::Syr2k { a, b, trans } => {
            let (a1, a2) = (fmt(a, Ctx::Factor), format!("{}'", fmt(a, Ctx::Postfix)));
            let (b1, b2) = (fmt(b, Ctx::Factor), format!("{}'", fmt(b, Ctx::Postfix)));
            let body = if *trans {
                format!("{a2} * {b1} + {b2} * {a1}")
            } else {
                format!("{a1} * {b2} + {b1} * {a2}")
            };
            wrap(body, ctx != Ctx::Expr)
        }
        // No surface syntax; printed for diagnostics only.
        Expr::Sub { child, row0, col0, rows, cols } => format!(
            "<view {}:{} x {}:{} of {}>",
            row0 + 1,
            row0 + rows,
            col0 + 1,
            col0 + cols,
            fmt(child, Ctx::Expr)
        ),
    }
}

fn wrap(body: String, parens: bool) -> String {
    if parens {
        format!("({body})")
    } else {
        body
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_program;

    fn roundtrip(src: &str) {
        let once = parse_program(src).expect("parse");
        let printed = format_program(&once);
        let twice = parse_program(&printed)
            .unwrap_or_else(|e| panic!("printed program failed to reparse: {e}\n{printed}"));
        assert_eq!(once, twice, "print/parse changed the tree:\n{printed}");
    }

    #[test]
    fn roundtrips_products_sums_and_inverses() {
        roundtrip(
            "matrix A(8,4)\nmatrix B(8,8): spd\nvector y(8)\nvector x(4)\n\
             x := inv(A' * inv(B) * A) * A' * inv(B) * y",
        );
    }

    #[test]
    fn roundtrips_scalars_zero_blocks_and_loops() {
        roundtrip(
            "scalar mu = 0.25\n\
             scalar k = 3\n\
             matrix A(2,2): symmetric\n\
             matrix B(3,3): lower_triangular\n\
             matrix K(5,5)\n\
             matrix W(5,5)\n\
             vector s(5)\n\
             K := [A, 0; 0, B]\n\
             W := K - mu * K * K'\n\
             for i in 1:k { s[i] := W[i,i] }",
        );
    }

    #[test]
    fn roundtrips_accesses() {
        roundtrip(
            "matrix A(6,6)\nmatrix B(6,6)\nvector c(6)\nvector d(6)\nscalar e\n\
             c := (A * B)[:,2]\n\
             d := diag(A * B)\n\
             e := (A + B)[1,6]",
        );
    }

    #[test]
    fn spd_closure_prints_as_single_name() {
        let p = parse_program("matrix B(4,4): spd\nmatrix C(4,4)\nC := B").unwrap();
        let text = format_program(&p);
        assert!(text.contains("matrix B(4, 4): spd\n"), "got: {text}");
    }

    #[test]
    fn identity_closure_prints_as_single_name() {
        let p = parse_program("matrix I(4,4): identity\nmatrix C(4,4)\nC := I").unwrap();
        assert!(format_program(&p).contains("matrix I(4, 4): identity\n"));
    }

    #[test]
    fn sum_inside_product_is_parenthesized() {
        let p = parse_program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix C(4,4)\nC := A * (A + B) * B",
        )
        .unwrap();
        let line = format_program(&p);
        assert!(line.contains("C := A * (A + B) * B"), "got: {line}");
    }

    #[test]
    fn leading_minus_prints_bare() {
        let p =
            parse_program("matrix A(4,4)\nmatrix B(4,4)\nmatrix C(4,4)\nC := -A * B + B").unwrap();
        assert!(format_program(&p).contains("C := -A * B + B"));
        roundtrip("matrix A(4,4)\nmatrix B(4,4)\nmatrix C(4,4)\nC := -A * B + B");
    }
}
