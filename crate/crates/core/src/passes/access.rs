//! Partial-access pushdown: when a statement only keeps an element, a
//! column, or the diagonal of a composite value, compute just that slice
//! instead of the whole matrix.
//!
//! Two kinds of rewrite cooperate:
//!
//! * expression rules move `E[i,j]`, `E[:,j]`, and `diag(E)` through sums,
//!   scalings, products, and left solves — `(A·B)[i,j]` becomes the dot
//!   product of a row of `A` with a column of `B`, `(A⁻¹B)[:,j]` solves for
//!   a single right-hand side, and so on;
//! * a statement rule turns `v := diag(E)` with compute under the `diag`
//!   into an explicit loop `for k { v[k] := E[k,k] }`, whose body the
//!   expression rules then shrink further.
//!
//! Every candidate is accepted only when the whole program's plan gets
//! strictly cheaper, so reads that are already free (`diag(A)` of a plain
//! operand) stay untouched.

use std::collections::BTreeSet;

use crate::ir::{
    canonicalize, canonicalize_program, shape_of, Bound, Expr, Lhs, Program, Selector, Side, Stmt,
};

use super::{bears_compute, cost_of, map_expr, split_coeff, wrap_coeff};

pub fn pushdown_partial_access(program: &Program) -> Program {
    let mut cur = canonicalize_program(program.clone());
    let Some(mut cur_cost) = cost_of(&cur) else { return cur };
    for path in assign_paths(&cur.stmts) {
        let Stmt::Assign { lhs, expr } = stmt_at(&cur.stmts, &path).clone() else {
            continue;
        };
        let mut candidates = Vec::new();
        let pushed = push_fixpoint(expr.clone());
        if pushed != expr {
            candidates.push(Stmt::Assign { lhs: lhs.clone(), expr: pushed });
        }
        if let Some(loop_stmt) = diag_loop(&cur, &lhs, &expr) {
            candidates.push(loop_stmt);
        }
        let mut best: Option<(u64, Program)> = None;
        for cand in candidates {
            let trial = canonicalize_program(replace_at(&cur, &path, cand));
            if let Some(c) = cost_of(&trial) {
                if c < cur_cost && best.as_ref().is_none_or(|(bc, _)| c < *bc) {
                    best = Some((c, trial));
                }
            }
        }
        if let Some((c, next)) = best {
            cur = next;
            cur_cost = c;
        }
    }
    cur
}

// -- statement plumbing -------------------------------------------------------

/// Paths (index per nesting level) of every assignment in the tree.
fn assign_paths(stmts: &[Stmt]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn walk(stmts: &[Stmt], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for (i, s) in stmts.iter().enumerate() {
            prefix.push(i);
            match s {
                Stmt::Assign { .. } => out.push(prefix.clone()),
                Stmt::For { body, .. } => walk(body, prefix, out),
            }
            prefix.pop();
        }
    }
    walk(stmts, &mut Vec::new(), &mut out);
    out
}

fn stmt_at<'a>(stmts: &'a [Stmt], path: &[usize]) -> &'a Stmt {
    let s = &stmts[path[0]];
    match (s, path.len()) {
        (_, 1) => s,
        (Stmt::For { body, .. }, _) => stmt_at(body, &path[1..]),
        _ => unreachable!("path through a non-loop statement"),
    }
}

/// A copy of `p` with the statement at `path` swapped out (one for one, so
/// other paths stay valid).
fn replace_at(p: &Program, path: &[usize], stmt: Stmt) -> Program {
    fn place(stmts: &mut [Stmt], path: &[usize], stmt: Stmt) {
        if path.len() == 1 {
            stmts[path[0]] = stmt;
        } else if let Stmt::For { body, .. } = &mut stmts[path[0]] {
            place(body, &path[1..], stmt);
        }
    }
    let mut out = p.clone();
    place(&mut out.stmts, path, stmt);
    out
}

// -- the diag-to-loop statement rule ------------------------------------------

fn diag_loop(p: &Program, lhs: &Lhs, expr: &Expr) -> Option<Stmt> {
    let Lhs::Var(name) = lhs else { return None };
    let (coeff, core) = split_coeff(expr);
    let Expr::Diag(inner) = core else { return None };
    if !bears_compute(inner) {
        return None;
    }
    let shape = shape_of(inner, &p.decls).ok()?;
    if shape.rows != shape.cols || shape.rows == 0 {
        return None;
    }
    let n = shape.rows;
    let dst = p.decls.get(name)?;
    if dst.shape.rows != n || dst.shape.cols != 1 {
        return None;
    }
    let idx = fresh_index(p);
    let elem = Expr::Element(
        inner.clone(),
        Selector::Sym(idx.clone()),
        Selector::Sym(idx.clone()),
    );
    let body = vec![Stmt::Assign {
        lhs: Lhs::Elem { name: name.clone(), row: Selector::Sym(idx.clone()), col: None },
        expr: push_fixpoint(wrap_coeff(coeff, elem)),
    }];
    Some(Stmt::For { index: idx, lo: Bound::Lit(1), hi: Bound::Lit(n as u64), body })
}

/// An index name free of declarations, loop indices, and selector symbols.
fn fresh_index(p: &Program) -> String {
    let mut used: BTreeSet<String> = p.decls.iter().map(|d| d.name.clone()).collect();
    fn scan(stmts: &[Stmt], used: &mut BTreeSet<String>) {
        for s in stmts {
            match s {
                Stmt::Assign { expr, .. } => expr.selector_symbols(used),
                Stmt::For { index, body, .. } => {
                    used.insert(index.clone());
                    scan(body, used);
                }
            }
        }
    }
    scan(&p.stmts, &mut used);
    if !used.contains("k") {
        return "k".to_string();
    }
    let mut n = 2usize;
    loop {
        let cand = format!("k{n}");
        if !used.contains(&cand) {
            return cand;
        }
        n += 1;
    }
}

// -- expression rules ---------------------------------------------------------

fn push_fixpoint(e: Expr) -> Expr {
    let mut cur = canonicalize(e);
    for _ in 0..16 {
        // Distribution creates fresh access nodes below the visit point, so
        // iterate the bottom-up sweep to a fixed point.
        let next = canonicalize(map_expr(cur.clone(), &mut push_rules));
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

fn push_rules(e: Expr) -> Expr {
    match e {
        Expr::Element(x, r, c) => match *x {
            Expr::Sum(ts) => Expr::Sum(
                ts.into_iter()
                    .map(|(s, t)| {
                        (s, Expr::Element(Box::new(t), r.clone(), c.clone()))
                    })
                    .collect(),
            ),
            Expr::ScalarMul(k, y) => {
                Expr::ScalarMul(k, Box::new(Expr::Element(y, r, c)))
            }
            Expr::Product(fs) => element_of_product(fs, r, c),
            other => Expr::Element(Box::new(other), r, c),
        },
        Expr::Column(x, c) => match *x {
            Expr::Sum(ts) => Expr::Sum(
                ts.into_iter()
                    .map(|(s, t)| (s, Expr::Column(Box::new(t), c.clone())))
                    .collect(),
            ),
            Expr::ScalarMul(k, y) => Expr::ScalarMul(k, Box::new(Expr::Column(y, c))),
            Expr::Product(mut fs) => {
                let last = fs.pop().expect("products are non-empty");
                fs.push(Expr::Column(Box::new(last), c));
                Expr::Product(fs)
            }
            Expr::Solve { a, b, side: Side::Left } => Expr::Solve {
                a,
                b: Box::new(Expr::Column(b, c)),
                side: Side::Left,
            },
            other => Expr::Column(Box::new(other), c),
        },
        Expr::Diag(x) => match *x {
            Expr::Sum(ts) => Expr::Sum(
                ts.into_iter()
                    .map(|(s, t)| (s, Expr::Diag(Box::new(t))))
                    .collect(),
            ),
            Expr::ScalarMul(k, y) => Expr::ScalarMul(k, Box::new(Expr::Diag(y))),
            other => Expr::Diag(Box::new(other)),
        },
        other => other,
    }
}

/// `(F₀·F₁·…·F_k)[i,j]` is row `i` of `F₀` through column `j` of `F_k`.
fn element_of_product(mut fs: Vec<Expr>, r: Selector, c: Selector) -> Expr {
    let last = fs.pop().expect("products are non-empty");
    let first = fs.remove(0);
    let row = Expr::Transpose(Box::new(Expr::Column(
        Box::new(Expr::Transpose(Box::new(first))),
        r,
    )));
    let col = Expr::Column(Box::new(last), c);
    let mut out = vec![row];
    out.append(&mut fs);
    out.push(col);
    Expr::Product(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{lower, plan_cost, Kernel};
    use crate::frontend::parse_program;
    use crate::passes::testutil::assert_same_results;

    fn program(src: &str) -> Program {
        parse_program(src).expect("test program parses")
    }

    fn cost(p: &Program) -> u64 {
        plan_cost(&lower(p).expect("lowers"))
    }

    fn kernels(p: &Program) -> Vec<Kernel> {
        lower(p).expect("lowers").calls.iter().map(|c| c.kernel).collect()
    }

    fn has_loop(p: &Program) -> bool {
        p.stmts.iter().any(|s| matches!(s, Stmt::For { .. }))
    }

    #[test]
    fn element_of_a_sum_reads_two_entries() {
        let p = program("matrix A(8,8)\nmatrix B(8,8)\nscalar s\ns := (A + B)[3,3]\n");
        let out = pushdown_partial_access(&p);
        assert_eq!(cost(&out), 2);
        assert!(!kernels(&out).contains(&Kernel::Add));
        assert_same_results(&p, &out);
    }

    #[test]
    fn column_of_a_sum_becomes_one_axpy() {
        let p = program("matrix A(8,8)\nmatrix B(8,8)\nvector y(8)\ny := (A + B)[:,5]\n");
        let out = pushdown_partial_access(&p);
        assert_eq!(cost(&out), 16);
        assert!(kernels(&out).contains(&Kernel::Axpy));
        assert!(!kernels(&out).contains(&Kernel::Add));
        assert_same_results(&p, &out);
    }

    #[test]
    fn diagonal_of_a_sum_distributes_without_a_loop() {
        let p = program("matrix A(8,8)\nmatrix B(8,8)\nvector d(8)\nd := diag(A + B)\n");
        let out = pushdown_partial_access(&p);
        assert_eq!(cost(&out), 16);
        assert!(!has_loop(&out), "vector rewrite should beat the element loop");
        assert_same_results(&p, &out);
    }

    #[test]
    fn element_of_a_product_is_one_dot() {
        let p = program("matrix A(8,8)\nmatrix B(8,8)\nscalar s\ns := (A * B)[3,3]\n");
        let out = pushdown_partial_access(&p);
        let ks = kernels(&out);
        assert_eq!(ks.iter().filter(|k| **k == Kernel::Dot).count(), 1);
        assert!(!ks.contains(&Kernel::Gemm));
        assert_eq!(cost(&out), 16);
        assert_same_results(&p, &out);
    }

    #[test]
    fn column_of_a_product_keeps_one_gemv() {
        let p = program("matrix A(8,8)\nmatrix B(8,8)\nvector y(8)\ny := (A * B)[:,5]\n");
        let out = pushdown_partial_access(&p);
        let ks = kernels(&out);
        assert!(ks.contains(&Kernel::Gemv));
        assert!(!ks.contains(&Kernel::Gemm));
        assert_eq!(cost(&out), 128);
        assert_same_results(&p, &out);
    }

    #[test]
    fn diagonal_of_a_product_loops_over_dots() {
        let p = program("matrix A(8,8)\nmatrix B(8,8)\nvector d(8)\nd := diag(A * B)\n");
        let out = pushdown_partial_access(&p);
        assert!(has_loop(&out));
        let ks = kernels(&out);
        assert_eq!(ks.iter().filter(|k| **k == Kernel::Dot).count(), 8);
        assert!(!ks.contains(&Kernel::Gemm));
        // Eight dots landing straight in the elements: 2n².
        assert_eq!(cost(&out), 128);
        assert_same_results(&p, &out);
    }

    #[test]
    fn column_of_a_left_solve_narrows_the_right_hand_side() {
        let p = program("matrix A(8,8)\nmatrix B(8,8)\nvector y(8)\ny := (inv(A) * B)[:,2]\n");
        let solved = crate::passes::rewrite_inv_to_solve(&p);
        let out = pushdown_partial_access(&solved);
        assert_eq!(kernels(&out), vec![Kernel::Getrf, Kernel::Getrs]);
        assert_eq!(cost(&out), 341 + 128);
        assert_same_results(&p, &out);
    }

    #[test]
    fn scaled_accesses_keep_their_coefficients() {
        let p = program("matrix A(8,8)\nmatrix B(8,8)\nscalar s\ns := (2*(A + B))[3,3]\n");
        let out = pushdown_partial_access(&p);
        assert_eq!(cost(&out), 3);
        assert_same_results(&p, &out);
    }

    #[test]
    fn plain_diagonal_reads_stay_put() {
        let p = program("matrix A(8,8)\nvector d(8)\nd := diag(A)\n");
        let out = pushdown_partial_access(&p);
        assert_eq!(out, canonicalize_program(p));
    }

    #[test]
    fn pushdown_is_idempotent() {
        let p = program(
            "matrix A(8,8)\nmatrix B(8,8)\nvector d(8)\nscalar s\n\
             d := diag(A * B)\ns := (A + B)[3,3]\n",
        );
        let once = pushdown_partial_access(&p);
        let twice = pushdown_partial_access(&once);
        assert_eq!(once, twice);
    }
}
