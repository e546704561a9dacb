//! Inverse elimination: products containing an explicit inverse become
//! linear-system solves.
//!
//! Within each product the scan runs right to left. An inverse absorbs the
//! whole remaining chain on its cheaper side — the suffix for a left solve
//! (`A⁻¹·(…)`), the prefix for a right solve (`(…)·A⁻¹`) — so a chain like
//! `A⁻ᵀBᵀBA⁻¹y` collapses into nested solves that evaluate right to left,
//! with the factorization of `A` shared at lowering time. A bare `X := inv(A)`
//! keeps its explicit inverse; there is nothing to solve against.

use crate::ir::{canonicalize_program, shape_of, Decls, Expr, Program, Side};

use super::{keep_if_cheaper, map_expr, map_rhs};

pub fn rewrite_inv_to_solve(program: &Program) -> Program {
    let decls = program.decls.clone();
    let rewritten = map_rhs(program, &mut |root| {
        map_expr(root, &mut |e| match e {
            Expr::Product(fs) => absorb(fs, &decls),
            other => other,
        })
    });
    keep_if_cheaper(program.clone(), canonicalize_program(rewritten))
}

/// Rewrites the factor list of one product, consuming inverses from the
/// right. Recursion terminates because every call removes one inverse.
fn absorb(mut factors: Vec<Expr>, decls: &Decls) -> Expr {
    let k = match factors.iter().rposition(|f| matches!(f, Expr::Inverse(_))) {
        None => return rebuild(factors),
        Some(k) => k,
    };
    let suffix = factors.split_off(k + 1);
    let a = match factors.pop() {
        Some(Expr::Inverse(x)) => *x,
        _ => unreachable!("rposition found an inverse"),
    };
    let prefix = factors;

    let side = if suffix.is_empty() {
        Side::Right
    } else if prefix.is_empty() {
        Side::Left
    } else {
        // A left solve carries as many right-hand sides as the absorbed
        // suffix has columns; a right solve as many as the prefix has rows.
        let suffix_cols = shape_of(suffix.last().expect("nonempty"), decls)
            .map(|s| s.cols)
            .unwrap_or(usize::MAX);
        let prefix_rows = shape_of(prefix.first().expect("nonempty"), decls)
            .map(|s| s.rows)
            .unwrap_or(usize::MAX);
        if suffix_cols <= prefix_rows {
            Side::Left
        } else {
            Side::Right
        }
    };

    match side {
        Side::Left => {
            // The suffix holds no inverse (k was the rightmost), so it can be
            // taken as-is; the prefix may still hold some, and the next one
            // to the left will absorb the new solve as part of its suffix.
            let b = rebuild(suffix);
            let solve = Expr::Solve { a: Box::new(a), b: Box::new(b), side: Side::Left };
            let mut rest = prefix;
            rest.push(solve);
            absorb(rest, decls)
        }
        Side::Right => {
            let b = absorb(prefix, decls);
            let solve = Expr::Solve { a: Box::new(a), b: Box::new(b), side: Side::Right };
            let mut rest = vec![solve];
            rest.extend(suffix);
            rebuild(rest)
        }
    }
}

fn rebuild(mut factors: Vec<Expr>) -> Expr {
    match factors.len() {
        0 => unreachable!("empty factor list"),
        1 => factors.pop().expect("single factor"),
        _ => Expr::Product(factors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{lower, Kernel};
    use crate::frontend::parse_program;
    use crate::ir::Stmt;
    use crate::passes::testutil::assert_same_results;

    fn program(src: &str) -> Program {
        parse_program(src).expect("test program parses")
    }

    fn rhs(p: &Program, idx: usize) -> &Expr {
        match &p.stmts[idx] {
            Stmt::Assign { expr, .. } => expr,
            other => panic!("expected an assignment, got {other:?}"),
        }
    }

    fn kernels(p: &Program) -> Vec<Kernel> {
        lower(p).expect("lowers").calls.iter().map(|c| c.kernel).collect()
    }

    #[test]
    fn inverse_times_vector_becomes_a_left_solve() {
        let p = program("matrix A(5,5)\nvector b(5)\nvector x(5)\nx := inv(A)*b\n");
        let out = rewrite_inv_to_solve(&p);
        assert_eq!(
            *rhs(&out, 0),
            Expr::Solve {
                a: Box::new(Expr::operand("A")),
                b: Box::new(Expr::operand("b")),
                side: Side::Left,
            }
        );
        assert_eq!(kernels(&out), vec![Kernel::Getrf, Kernel::Getrs]);
        assert_same_results(&p, &out);
    }

    #[test]
    fn bare_explicit_inverse_is_left_alone() {
        let p = program("matrix A(5,5)\nmatrix X(5,5)\nX := inv(A)\n");
        let out = rewrite_inv_to_solve(&p);
        assert_eq!(out, canonicalize_program(p));
    }

    #[test]
    fn trailing_inverse_becomes_a_right_solve() {
        let p = program("matrix A(5,5)\nvector c(5)\nmatrix y(1,5)\ny := c'*inv(A)\n");
        let out = rewrite_inv_to_solve(&p);
        match rhs(&out, 0) {
            Expr::Solve { side: Side::Right, a, .. } => {
                assert_eq!(**a, Expr::operand("A"));
            }
            other => panic!("expected a right solve, got {other:?}"),
        }
        assert_eq!(kernels(&out), vec![Kernel::Getrf, Kernel::Getrs, Kernel::Copy]);
        assert_same_results(&p, &out);
    }

    #[test]
    fn middle_inverse_absorbs_the_narrower_side() {
        // D·A⁻¹·c: the suffix is a single column, the prefix a full matrix.
        let p = program(
            "matrix D(5,5)\nmatrix A(5,5)\nvector c(5)\nvector x(5)\nx := D*inv(A)*c\n",
        );
        let out = rewrite_inv_to_solve(&p);
        match rhs(&out, 0) {
            Expr::Product(fs) => {
                assert_eq!(fs[0], Expr::operand("D"));
                assert!(matches!(&fs[1], Expr::Solve { side: Side::Left, .. }));
            }
            other => panic!("expected D·solve, got {other:?}"),
        }
        assert_same_results(&p, &out);

        // c'·A⁻¹·E: the prefix is a single row, the suffix a full matrix.
        let p = program(
            "matrix E(5,5)\nmatrix A(5,5)\nvector c(5)\nmatrix y(1,5)\ny := c'*inv(A)*E\n",
        );
        let out = rewrite_inv_to_solve(&p);
        match rhs(&out, 0) {
            Expr::Product(fs) => {
                assert!(matches!(&fs[0], Expr::Solve { side: Side::Right, .. }));
                assert_eq!(fs[1], Expr::operand("E"));
            }
            other => panic!("expected solve·E, got {other:?}"),
        }
        assert_same_results(&p, &out);
    }

    #[test]
    fn chained_inverses_nest_right_to_left() {
        let p = program(
            "matrix A(5,5)\nmatrix B(5,5)\nvector y(5)\nvector x(5)\nx := inv(A)*inv(B)*y\n",
        );
        let out = rewrite_inv_to_solve(&p);
        match rhs(&out, 0) {
            Expr::Solve { a, b, side: Side::Left } => {
                assert_eq!(**a, Expr::operand("A"));
                assert!(matches!(**b, Expr::Solve { side: Side::Left, .. }));
            }
            other => panic!("expected nested solves, got {other:?}"),
        }
        let ks = kernels(&out);
        assert_eq!(ks.iter().filter(|k| **k == Kernel::Getrf).count(), 2);
        assert_eq!(ks.iter().filter(|k| **k == Kernel::Getrs).count(), 2);
        assert!(!ks.contains(&Kernel::Getri));
        assert_same_results(&p, &out);
    }

    #[test]
    fn long_chains_evaluate_right_to_left() {
        let p = program(
            "matrix A(6,6)\nmatrix B(6,6)\nvector y(6)\nvector x(6)\n\
             x := inv(A')*B'*B*inv(A)*y\n",
        );
        let out = rewrite_inv_to_solve(&p);
        let ks = kernels(&out);
        assert_eq!(ks.iter().filter(|k| **k == Kernel::Getrf).count(), 1);
        assert_eq!(ks.iter().filter(|k| **k == Kernel::Getrs).count(), 2);
        assert_eq!(ks.iter().filter(|k| **k == Kernel::Gemv).count(), 2);
        assert!(!ks.contains(&Kernel::Getri));
        assert!(!ks.contains(&Kernel::Gemm));
        assert_same_results(&p, &out);
    }

    #[test]
    fn rewriting_is_idempotent() {
        let p = program(
            "matrix A(5,5)\nmatrix B(5,5)\nmatrix C(5,5)\nvector y(5)\nvector x(5)\n\
             x := B*inv(A)*y\nC := inv(B)\n",
        );
        let once = canonicalize_program(rewrite_inv_to_solve(&p));
        let twice = canonicalize_program(rewrite_inv_to_solve(&once));
        assert_eq!(once, twice);
    }

    #[test]
    fn inverses_inside_subexpressions_are_rewritten() {
        let p = program(
            "matrix A(5,5)\nmatrix B(5,5)\nvector y(5)\nvector x(5)\n\
             x := B*(inv(A)*y) + y\n",
        );
        let out = rewrite_inv_to_solve(&p);
        let ks = kernels(&out);
        assert!(ks.contains(&Kernel::Getrf) && ks.contains(&Kernel::Getrs));
        assert!(!ks.contains(&Kernel::Getri));
        assert_same_results(&p, &out);
    }
}
