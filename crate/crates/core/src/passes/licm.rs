//! Loop-invariant code motion: compute-bearing subexpressions whose inputs
//! do not change across a loop move out in front of it, turning repeated
//! work into a single evaluation read back each iteration.
//!
//! A subtree may leave a loop only when
//!
//! * it actually computes something (plain reads are already free),
//! * none of its selectors mention an enclosing loop index, and
//! * none of its operands are assigned anywhere in the loop body.
//!
//! Inner loops are processed first, so an invariant hoisted into an outer
//! body can ride further out when the outer loop allows it. Loops without
//! static bounds, and loops that run fewer than twice, are left alone —
//! there is nothing to amortize the hoisted evaluation against.

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{
    canonicalize, canonicalize_program, infer_properties, resolve_bound, shape_of, Expr, Lhs,
    Program, Stmt,
};

use super::{bears_compute, keep_if_cheaper};

pub fn hoist_loop_invariants(program: &Program) -> Program {
    let original = canonicalize_program(program.clone());
    let mut work = original.clone();
    let stmts = std::mem::take(&mut work.stmts);
    let mut rebuilt = Vec::new();
    for s in stmts {
        process(s, &mut work, &mut rebuilt);
    }
    work.stmts = rebuilt;
    keep_if_cheaper(original, canonicalize_program(work))
}

fn process(s: Stmt, p: &mut Program, out: &mut Vec<Stmt>) {
    let Stmt::For { index, lo, hi, body } = s else {
        out.push(s);
        return;
    };
    let mut inner = Vec::new();
    for b in body {
        process(b, p, &mut inner);
    }
    let body = inner;

    let trip = match (resolve_bound(&lo, &p.decls), resolve_bound(&hi, &p.decls)) {
        (Ok(l), Ok(h)) if h >= l => h - l + 1,
        (Ok(_), Ok(_)) => 0,
        _ => {
            out.push(Stmt::For { index, lo, hi, body });
            return;
        }
    };
    if trip < 2 {
        out.push(Stmt::For { index, lo, hi, body });
        return;
    }

    let mut assigned = BTreeSet::new();
    for b in &body {
        b.assigned_names(&mut assigned);
    }
    let mut hoister = Hoister {
        assigned,
        bound: BTreeSet::from([index.clone()]),
        memo: BTreeMap::new(),
        hoisted: Vec::new(),
    };
    let body = body.into_iter().map(|b| hoister.stmt(b, p)).collect();
    out.append(&mut hoister.hoisted);
    out.push(Stmt::For { index, lo, hi, body });
}

struct Hoister {
    /// Names written anywhere in the loop body.
    assigned: BTreeSet<String>,
    /// Loop indices in scope at the current visit point.
    bound: BTreeSet<String>,
    /// Canonical hoisted expression → temporary holding it.
    memo: BTreeMap<Expr, String>,
    hoisted: Vec<Stmt>,
}

impl Hoister {
    fn stmt(&mut self, s: Stmt, p: &mut Program) -> Stmt {
        match s {
            Stmt::Assign { lhs, expr } => Stmt::Assign { lhs, expr: self.expr(expr, p) },
            Stmt::For { index, lo, hi, body } => {
                let added = self.bound.insert(index.clone());
                let body = body.into_iter().map(|b| self.stmt(b, p)).collect();
                if added {
                    self.bound.remove(&index);
                }
                Stmt::For { index, lo, hi, body }
            }
        }
    }

    /// Top-down: replace a maximal invariant subtree wholesale, otherwise
    /// look inside it.
    fn expr(&mut self, e: Expr, p: &mut Program) -> Expr {
        if self.invariant(&e) {
            let key = canonicalize(e.clone());
            if let Some(t) = self.memo.get(&key) {
                return Expr::Operand(t.clone());
            }
            if let Ok(shape) = shape_of(&key, &p.decls) {
                let props = infer_properties(&key, &p.decls);
                let t = p.fresh_decl("h", shape, props);
                self.hoisted.push(Stmt::Assign { lhs: Lhs::Var(t.clone()), expr: key.clone() });
                self.memo.insert(key, t.clone());
                return Expr::Operand(t);
            }
        }
        self.descend(e, p)
    }

    fn invariant(&self, e: &Expr) -> bool {
        if !bears_compute(e) {
            return false;
        }
        let mut sels = BTreeSet::new();
        e.selector_symbols(&mut sels);
        if sels.iter().any(|s| self.bound.contains(s)) {
            return false;
        }
        let mut reads = BTreeSet::new();
        e.referenced_operands(&mut reads);
        reads.is_disjoint(&self.assigned)
    }

    fn descend(&mut self, e: Expr, p: &mut Program) -> Expr {
        match e {
            Expr::Product(fs) => {
                Expr::Product(fs.into_iter().map(|f| self.expr(f, p)).collect())
            }
            Expr::Sum(ts) => Expr::Sum(
                ts.into_iter().map(|(s, t)| (s, self.expr(t, p))).collect(),
            ),
            Expr::Transpose(x) => Expr::Transpose(Box::new(self.expr(*x, p))),
            Expr::Inverse(x) => Expr::Inverse(Box::new(self.expr(*x, p))),
            Expr::ScalarMul(c, x) => Expr::ScalarMul(c, Box::new(self.expr(*x, p))),
            Expr::Block(g) => Expr::Block(
                g.into_iter()
                    .map(|row| row.into_iter().map(|c| self.expr(c, p)).collect())
                    .collect(),
            ),
            Expr::Diag(x) => Expr::Diag(Box::new(self.expr(*x, p))),
            Expr::Element(x, r, c) => Expr::Element(Box::new(self.expr(*x, p)), r, c),
            Expr::Column(x, c) => Expr::Column(Box::new(self.expr(*x, p)), c),
            Expr::Sub { child, row0, col0, rows, cols } => Expr::Sub {
                child: Box::new(self.expr(*child, p)),
                row0,
                col0,
                rows,
                cols,
            },
            Expr::Solve { a, b, side } => Expr::Solve {
                a: Box::new(self.expr(*a, p)),
                b: Box::new(self.expr(*b, p)),
                side,
            },
            Expr::Syrk { a, trans } => {
                Expr::Syrk { a: Box::new(self.expr(*a, p)), trans }
            }
            Expr::Syr2k { a, b, trans } => Expr::Syr2k {
                a: Box::new(self.expr(*a, p)),
                b: Box::new(self.expr(*b, p)),
                trans,
            },
            leaf @ (Expr::Operand(_) | Expr::Zero(_)) => leaf,
        }
    }
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

    fn gemm_count(p: &Program) -> usize {
        lower(p)
            .expect("lowers")
            .calls
            .iter()
            .filter(|c| c.kernel == Kernel::Gemm)
            .count()
    }

    #[test]
    fn invariant_products_leave_the_loop() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix M(4,4)\nvector x(4)\n\
             for i in 1:4 { M := A*B\n x[i] := M[i,i] }\n",
        );
        let out = hoist_loop_invariants(&p);
        assert_eq!(gemm_count(&out), 1, "product should be computed once");
        // One 4×4 multiply plus four one-flop element writes: 2n³ + n.
        assert_eq!(cost(&out), 2 * 64 + 4);
        assert_same_results(&p, &out);
    }

    #[test]
    fn loop_dependent_work_stays_inside() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nvector x(4)\n\
             for i in 1:4 { x := A*B[:,i] }\n",
        );
        let out = hoist_loop_invariants(&p);
        assert_eq!(out, canonicalize_program(p));
    }

    #[test]
    fn element_reads_of_an_invariant_product_hoist_the_product() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nvector x(4)\n\
             for i in 1:4 { x[i] := (A*B)[i,1] }\n",
        );
        let out = hoist_loop_invariants(&p);
        assert_eq!(gemm_count(&out), 1);
        assert_eq!(cost(&out), 2 * 64 + 4);
        assert_same_results(&p, &out);
    }

    #[test]
    fn writes_inside_the_loop_pin_their_reads() {
        let p = program(
            "matrix M(4,4)\nmatrix B(4,4)\n\
             for i in 1:4 { M := M*B }\n",
        );
        let out = hoist_loop_invariants(&p);
        assert_eq!(out, canonicalize_program(p));
        assert_eq!(gemm_count(&out), 4);
    }

    #[test]
    fn nested_loops_cascade_outward() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix M(4,4)\nvector x(4)\n\
             for i in 1:4 { for j in 1:4 { M := A*B\n x[j] := M[j,i] } }\n",
        );
        let out = hoist_loop_invariants(&p);
        assert_eq!(gemm_count(&out), 1, "product should escape both loops");
        match &out.stmts[0] {
            Stmt::Assign { expr, .. } => assert!(matches!(expr, Expr::Product(_))),
            other => panic!("expected the hoisted product first, got {other:?}"),
        }
        assert_same_results(&p, &out);
    }

    #[test]
    fn invariant_factors_hoist_out_of_mixed_expressions() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nvector c(4)\nvector x(4)\n\
             for i in 1:4 { x[i] := (A*B)[i,1] + c[i,1] }\n",
        );
        let out = hoist_loop_invariants(&p);
        assert_eq!(gemm_count(&out), 1, "the product part is invariant");
        assert_same_results(&p, &out);
    }

    #[test]
    fn repeated_invariants_share_one_temporary() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nvector x(4)\nvector y(4)\n\
             for i in 1:4 { x[i] := (A*B)[i,1]\n y[i] := (A*B)[i,2] }\n",
        );
        let out = hoist_loop_invariants(&p);
        assert_eq!(gemm_count(&out), 1, "both reads share one hoisted product");
        assert_same_results(&p, &out);
    }

    #[test]
    fn zero_trip_loops_hoist_nothing() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix M(4,4)\n\
             for i in 3:2 { M := A*B }\n",
        );
        let out = hoist_loop_invariants(&p);
        assert_eq!(out, canonicalize_program(p));
        assert_eq!(gemm_count(&out), 0);
    }

    #[test]
    fn single_trip_loops_are_left_alone() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix M(4,4)\n\
             for i in 2:2 { M := A*B }\n",
        );
        let out = hoist_loop_invariants(&p);
        assert_eq!(out, canonicalize_program(p));
    }

    #[test]
    fn hoisting_is_idempotent() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix M(4,4)\nvector x(4)\n\
             for i in 1:4 { M := A*B\n x[i] := M[i,i] }\n",
        );
        let once = hoist_loop_invariants(&p);
        let twice = hoist_loop_invariants(&once);
        assert_eq!(once, twice);
    }
}
