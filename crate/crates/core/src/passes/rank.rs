//! Rank-update detection: `A·Aᵀ` becomes a symmetric rank-k node and
//! `A·Bᵀ + B·Aᵀ` a rank-2k node, so lowering can emit SYRK/SYR2K at half the
//! general-multiply cost.
//!
//! Matching runs on canonical trees, so syntactic variants (`(Aᵀ)ᵀ·Aᵀ`,
//! transposed sums, hoisted coefficients) have already collapsed into the
//! two shapes handled here. Only statement roots are rewritten — the
//! specialized kernels pay off when the symmetric result is the final value
//! of a term, while interior occurrences are better left to chain ordering.

use crate::ir::{canonicalize_program, Expr, Program, Sign};

use super::{keep_if_cheaper, map_rhs, split_coeff, transposed, wrap_coeff};

pub fn detect_rank_updates(program: &Program) -> Program {
    let rewritten = map_rhs(program, &mut rewrite_root);
    keep_if_cheaper(program.clone(), canonicalize_program(rewritten))
}

fn rewrite_root(e: Expr) -> Expr {
    match e {
        Expr::ScalarMul(c, x) => Expr::ScalarMul(c, Box::new(rewrite_root(*x))),
        Expr::Sum(terms) => Expr::Sum(rewrite_sum(terms)),
        other => match as_syrk(&other) {
            Some(node) => node,
            None => other,
        },
    }
}

/// `f·fᵀ` (or `fᵀ·f`) as a rank-k node; the orientation rides on `f` itself.
fn as_syrk(e: &Expr) -> Option<Expr> {
    let (c, core) = split_coeff(e);
    let fs = two_factors(core)?;
    if fs[1] == transposed(&fs[0]) {
        let node = Expr::Syrk { a: Box::new(fs[0].clone()), trans: false };
        Some(wrap_coeff(c, node))
    } else {
        None
    }
}

fn two_factors(e: &Expr) -> Option<&[Expr]> {
    match e {
        Expr::Product(fs) if fs.len() == 2 => Some(fs),
        _ => None,
    }
}

/// Pairs matching cross terms into rank-2k nodes, then turns remaining
/// symmetric products into rank-k nodes.
fn rewrite_sum(terms: Vec<(Sign, Expr)>) -> Vec<(Sign, Expr)> {
    let mut slots: Vec<Option<(Sign, Expr)>> = terms.into_iter().map(Some).collect();
    for i in 0..slots.len() {
        let Some((si, ei)) = slots[i].clone() else { continue };
        let (ci, pi) = split_coeff(&ei);
        let Some(fs) = two_factors(pi).map(<[Expr]>::to_vec) else { continue };
        for j in i + 1..slots.len() {
            let Some((sj, ej)) = slots[j].clone() else { continue };
            if sj != si {
                continue;
            }
            let (cj, pj) = split_coeff(&ej);
            if cj != ci {
                continue;
            }
            let Some(gs) = two_factors(pj) else { continue };
            // f₀·f₁ + g₀·g₁ with g₀ = f₁ᵀ and g₁ = f₀ᵀ is a·bᵀ + b·aᵀ for
            // a = f₀, b = f₁ᵀ.
            if gs[0] == transposed(&fs[1]) && gs[1] == transposed(&fs[0]) {
                let node = Expr::Syr2k {
                    a: Box::new(fs[0].clone()),
                    b: Box::new(transposed(&fs[1])),
                    trans: false,
                };
                slots[i] = Some((si, wrap_coeff(ci, node)));
                slots[j] = None;
                break;
            }
        }
    }
    for slot in slots.iter_mut().flatten() {
        if let Some(node) = as_syrk(&slot.1) {
            slot.1 = node;
        }
    }
    slots.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{lower, plan_cost, Kernel};
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
    fn gram_products_become_rank_updates() {
        let p = program("matrix A(8,4)\nmatrix C(8,8)\nC := A*A'\n");
        let out = detect_rank_updates(&p);
        assert!(matches!(rhs(&out, 0), Expr::Syrk { trans: false, .. }));
        assert_eq!(kernels(&out), vec![Kernel::Syrk]);
        assert_eq!(plan_cost(&lower(&out).unwrap()), 8 * 8 * 4);
        assert_same_results(&p, &out);
    }

    #[test]
    fn transposed_gram_products_match_too() {
        let p = program("matrix A(8,4)\nmatrix C(4,4)\nC := A'*A\n");
        let out = detect_rank_updates(&p);
        match rhs(&out, 0) {
            Expr::Syrk { a, .. } => assert!(matches!(**a, Expr::Transpose(_))),
            other => panic!("expected a rank-k node, got {other:?}"),
        }
        assert_eq!(kernels(&out), vec![Kernel::Syrk]);
        assert_eq!(plan_cost(&lower(&out).unwrap()), 4 * 4 * 8);
        assert_same_results(&p, &out);
    }

    #[test]
    fn paired_cross_products_become_rank_2k_updates() {
        let p = program("matrix A(6,3)\nmatrix B(6,3)\nmatrix C(6,6)\nC := A*B' + B*A'\n");
        let out = detect_rank_updates(&p);
        assert!(matches!(rhs(&out, 0), Expr::Syr2k { .. }));
        assert_eq!(kernels(&out), vec![Kernel::Syr2k]);
        assert_eq!(plan_cost(&lower(&out).unwrap()), 2 * 6 * 6 * 3);
        assert_same_results(&p, &out);
    }

    #[test]
    fn transposed_cross_pairs_also_match() {
        let p = program("matrix A(6,3)\nmatrix B(6,3)\nmatrix C(3,3)\nC := A'*B + B'*A\n");
        let out = detect_rank_updates(&p);
        assert!(matches!(rhs(&out, 0), Expr::Syr2k { .. }));
        assert_eq!(kernels(&out), vec![Kernel::Syr2k]);
        assert_same_results(&p, &out);
    }

    #[test]
    fn mismatched_pairs_stay_general_products() {
        let p = program(
            "matrix A(6,3)\nmatrix B(6,3)\nmatrix D(6,3)\nmatrix C(6,6)\nC := A*B' + B*D'\n",
        );
        let out = detect_rank_updates(&p);
        assert_eq!(out, canonicalize_program(p));
    }

    #[test]
    fn updates_keep_their_base_term() {
        let p = program("matrix A(8,4)\nmatrix C(8,8)\nC := A*A' + C\n");
        let out = detect_rank_updates(&p);
        let plan = lower(&out).unwrap();
        assert_eq!(plan.calls.len(), 1, "one fused call, got {:?}", plan.calls);
        assert_eq!(plan.calls[0].kernel, Kernel::Syrk);
        assert_same_results(&p, &out);
    }

    #[test]
    fn scaled_rank_updates_keep_their_coefficients() {
        let p = program("matrix A(8,4)\nmatrix C(8,8)\nscalar g = 3\nC := g*A*A'\n");
        let out = detect_rank_updates(&p);
        let plan = lower(&out).unwrap();
        assert_eq!(plan.calls[0].kernel, Kernel::Syrk);
        let alpha = plan.calls[0].alpha.clone().expect("syrk carries alpha");
        assert_eq!(alpha.syms, vec!["g".to_string()]);
        assert_same_results(&p, &out);
    }

    #[test]
    fn detection_is_idempotent() {
        let p = program(
            "matrix A(6,3)\nmatrix B(6,3)\nmatrix C(6,6)\nmatrix D(6,6)\n\
             C := A*B' + B*A'\nD := A*A' + D\n",
        );
        let once = canonicalize_program(detect_rank_updates(&p));
        let twice = canonicalize_program(detect_rank_updates(&once));
        assert_eq!(once, twice);
    }

    #[test]
    fn inner_products_take_the_cheaper_rank_form() {
        // x'·x as a 1×1 rank-k update costs n against the 2n dot; the cost
        // model treats the missing doubling as a win, so the rewrite sticks.
        let p = program("vector x(8)\nscalar s\ns := x'*x\n");
        let out = detect_rank_updates(&p);
        assert_eq!(kernels(&out), vec![Kernel::Syrk]);
        assert_eq!(plan_cost(&lower(&out).unwrap()), 8);
        assert_same_results(&p, &out);
    }
}
