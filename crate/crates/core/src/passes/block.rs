//! Block-structure exploitation: a solve or product against a block-diagonal
//! matrix falls apart into independent per-block operations on slices of the
//! other operand, shrinking the cubic factorization and multiply terms.
//!
//! The pass tracks which variables currently hold a block literal by scanning
//! statements in order; a grid is trusted only while neither the variable nor
//! any matrix appearing in its cells has been reassigned. Splitting applies
//! when the grid is square, at least 2×2, zero off the diagonal, and carries
//! plain square operands on it — and only when the sliced operand is itself a
//! plain leaf, so no subexpression gets recomputed per block.

use std::collections::{BTreeSet, HashMap};

use crate::ir::{canonicalize_program, shape_of, Decls, Expr, Lhs, Program, Side, Stmt};

use super::{keep_if_cheaper, map_expr};

type Grid = Vec<Vec<Expr>>;

pub fn exploit_block_structure(program: &Program) -> Program {
    let original = canonicalize_program(program.clone());
    let mut work = original.clone();
    let stmts = std::mem::take(&mut work.stmts);
    let mut grids = HashMap::new();
    work.stmts = process_list(stmts, &work.decls, &mut grids);
    keep_if_cheaper(original, canonicalize_program(work))
}

fn process_list(
    stmts: Vec<Stmt>,
    decls: &Decls,
    grids: &mut HashMap<String, Grid>,
) -> Vec<Stmt> {
    stmts
        .into_iter()
        .map(|s| match s {
            Stmt::Assign { lhs, expr } => {
                let expr = map_expr(expr, &mut |e| rewrite(e, decls, grids));
                let target = lhs.name().to_string();
                grids.remove(&target);
                grids.retain(|_, g| !grid_mentions(g, &target));
                if let (Lhs::Var(v), Expr::Block(g)) = (&lhs, &expr) {
                    if leafy_grid(g) {
                        grids.insert(v.clone(), g.clone());
                    }
                }
                Stmt::Assign { lhs, expr }
            }
            Stmt::For { index, lo, hi, body } => {
                // A loop body sees no outer grids (it may run with cells
                // already rewritten by a previous iteration), and anything it
                // assigns stops being trusted afterwards.
                let mut inner = HashMap::new();
                let body = process_list(body, decls, &mut inner);
                let mut assigned = BTreeSet::new();
                for b in &body {
                    b.assigned_names(&mut assigned);
                }
                grids.retain(|k, g| {
                    !assigned.contains(k) && !assigned.iter().any(|a| grid_mentions(g, a))
                });
                Stmt::For { index, lo, hi, body }
            }
        })
        .collect()
}

fn grid_mentions(g: &Grid, name: &str) -> bool {
    let mut reads = BTreeSet::new();
    for row in g {
        for cell in row {
            cell.referenced_operands(&mut reads);
        }
    }
    reads.contains(name)
}

fn leafy_grid(g: &Grid) -> bool {
    let cols = g.first().map(Vec::len).unwrap_or(0);
    cols > 0
        && g.iter().all(|r| r.len() == cols)
        && g.iter()
            .flatten()
            .all(|c| matches!(c, Expr::Operand(_) | Expr::Zero(_)))
}

/// Diagonal cells (with sizes) of a block-diagonal grid behind `a`, either a
/// tracked variable or an inline literal.
fn diag_cells(
    a: &Expr,
    decls: &Decls,
    grids: &HashMap<String, Grid>,
) -> Option<Vec<(Expr, usize)>> {
    let g: &Grid = match a {
        Expr::Operand(n) => grids.get(n)?,
        Expr::Block(g) => g,
        _ => return None,
    };
    let k = g.len();
    if k < 2 || g.iter().any(|r| r.len() != k) {
        return None;
    }
    let mut cells = Vec::with_capacity(k);
    for (i, row) in g.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            if i == j {
                if !matches!(c, Expr::Operand(_)) {
                    return None;
                }
                let s = shape_of(c, decls).ok()?;
                if s.rows != s.cols || s.rows == 0 {
                    return None;
                }
                cells.push((c.clone(), s.rows));
            } else if !matches!(c, Expr::Zero(_)) {
                return None;
            }
        }
    }
    Some(cells)
}

/// Slicing duplicates the sliced expression per block, so only plain reads
/// qualify.
fn is_leaf(e: &Expr) -> bool {
    matches!(e, Expr::Operand(_))
        || matches!(e, Expr::Transpose(x) if matches!(**x, Expr::Operand(_)))
}

fn rewrite(e: Expr, decls: &Decls, grids: &HashMap<String, Grid>) -> Expr {
    match e {
        Expr::Solve { a, b, side } => {
            if is_leaf(&b) {
                if let Some(cells) = diag_cells(&a, decls, grids) {
                    if let Ok(bs) = shape_of(&b, decls) {
                        let total: usize = cells.iter().map(|(_, n)| n).sum();
                        let fits = match side {
                            Side::Left => bs.rows == total,
                            Side::Right => bs.cols == total,
                        };
                        if fits {
                            return split_solve(cells, *b, bs.rows, bs.cols, side);
                        }
                    }
                }
            }
            Expr::Solve { a, b, side }
        }
        Expr::Product(fs) if fs.len() == 2 => {
            let [f, g] = <[Expr; 2]>::try_from(fs).expect("two factors");
            if is_leaf(&g) {
                if let Some(cells) = diag_cells(&f, decls, grids) {
                    if let Ok(gs) = shape_of(&g, decls) {
                        if gs.rows == cells.iter().map(|(_, n)| n).sum::<usize>() {
                            return split_product(cells, g, gs.cols, Side::Left);
                        }
                    }
                }
            }
            if is_leaf(&f) {
                if let Some(cells) = diag_cells(&g, decls, grids) {
                    if let Ok(fsh) = shape_of(&f, decls) {
                        if fsh.cols == cells.iter().map(|(_, n)| n).sum::<usize>() {
                            return split_product(cells, f, fsh.rows, Side::Right);
                        }
                    }
                }
            }
            Expr::Product(vec![f, g])
        }
        other => other,
    }
}

fn split_solve(
    cells: Vec<(Expr, usize)>,
    b: Expr,
    brows: usize,
    bcols: usize,
    side: Side,
) -> Expr {
    let mut off = 0;
    let mut parts = Vec::with_capacity(cells.len());
    for (cell, n) in cells {
        let slice = match side {
            Side::Left => Expr::Sub {
                child: Box::new(b.clone()),
                row0: off,
                col0: 0,
                rows: n,
                cols: bcols,
            },
            Side::Right => Expr::Sub {
                child: Box::new(b.clone()),
                row0: 0,
                col0: off,
                rows: brows,
                cols: n,
            },
        };
        parts.push(Expr::Solve { a: Box::new(cell), b: Box::new(slice), side });
        off += n;
    }
    match side {
        Side::Left => Expr::Block(parts.into_iter().map(|p| vec![p]).collect()),
        Side::Right => Expr::Block(vec![parts]),
    }
}

/// `side` says where the block-diagonal factor sits relative to the sliced
/// one: `Left` splits the other operand by rows, `Right` by columns.
fn split_product(cells: Vec<(Expr, usize)>, other: Expr, span: usize, side: Side) -> Expr {
    let mut off = 0;
    let mut parts = Vec::with_capacity(cells.len());
    for (cell, n) in cells {
        let part = match side {
            Side::Left => {
                let slice = Expr::Sub {
                    child: Box::new(other.clone()),
                    row0: off,
                    col0: 0,
                    rows: n,
                    cols: span,
                };
                Expr::Product(vec![cell, slice])
            }
            Side::Right => {
                let slice = Expr::Sub {
                    child: Box::new(other.clone()),
                    row0: 0,
                    col0: off,
                    rows: span,
                    cols: n,
                };
                Expr::Product(vec![slice, cell])
            }
        };
        parts.push(part);
        off += n;
    }
    match side {
        Side::Left => Expr::Block(parts.into_iter().map(|p| vec![p]).collect()),
        Side::Right => Expr::Block(vec![parts]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{lower, plan_cost, Kernel};
    use crate::frontend::parse_program;
    use crate::passes::rewrite_inv_to_solve;
    use crate::passes::testutil::assert_same_results;

    fn program(src: &str) -> Program {
        parse_program(src).expect("test program parses")
    }

    fn cost(p: &Program) -> u64 {
        plan_cost(&lower(p).expect("lowers"))
    }

    fn count(p: &Program, k: Kernel) -> usize {
        lower(p).expect("lowers").calls.iter().filter(|c| c.kernel == k).count()
    }

    #[test]
    fn block_diagonal_solves_split_per_block() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix K(8,8)\nvector y(8)\nvector x(8)\n\
             K := [A, 0; 0, B]\nx := inv(K)*y\n",
        );
        let out = exploit_block_structure(&rewrite_inv_to_solve(&p));
        assert_eq!(count(&out, Kernel::Getrf), 2);
        assert_eq!(count(&out, Kernel::Getrs), 2);
        // Two 4×4 factor-and-solve pairs: 2·(⌊2·4³/3⌋ + 2·4²).
        assert_eq!(cost(&out), 2 * (42 + 32));
        assert_same_results(&p, &out);
    }

    #[test]
    fn inline_block_literals_split_too() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nvector y(8)\nvector x(8)\n\
             x := inv([A, 0; 0, B])*y\n",
        );
        let out = exploit_block_structure(&rewrite_inv_to_solve(&p));
        assert_eq!(count(&out, Kernel::Getrf), 2);
        assert_same_results(&p, &out);
    }

    #[test]
    fn reassigned_cells_invalidate_the_grid() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix C(4,4)\nmatrix K(8,8)\n\
             vector y(8)\nvector x(8)\n\
             K := [A, 0; 0, B]\nA := C*C\nx := inv(K)*y\n",
        );
        let out = exploit_block_structure(&rewrite_inv_to_solve(&p));
        assert_eq!(count(&out, Kernel::Getrf), 1, "grid is stale, keep the 8×8 solve");
        assert_same_results(&p, &out);
    }

    #[test]
    fn overwritten_variables_are_not_trusted() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix C(8,8)\nmatrix K(8,8)\n\
             vector y(8)\nvector x(8)\n\
             K := [A, 0; 0, B]\nK := C\nx := inv(K)*y\n",
        );
        let out = exploit_block_structure(&rewrite_inv_to_solve(&p));
        assert_eq!(count(&out, Kernel::Getrf), 1);
        assert_same_results(&p, &out);
    }

    #[test]
    fn off_diagonal_blocks_disable_the_split() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix C(4,4)\nmatrix K(8,8)\n\
             vector y(8)\nvector x(8)\n\
             K := [A, C; 0, B]\nx := inv(K)*y\n",
        );
        let out = exploit_block_structure(&rewrite_inv_to_solve(&p));
        assert_eq!(count(&out, Kernel::Getrf), 1);
        assert_same_results(&p, &out);
    }

    #[test]
    fn blocked_products_scale_each_part() {
        let p = program(
            "matrix D1(4,4): diagonal\nmatrix D2(4,4): diagonal\nmatrix K(8,8)\n\
             matrix G(8,3)\nmatrix X(8,3)\n\
             K := [D1, 0; 0, D2]\nX := K*G\n",
        );
        let out = exploit_block_structure(&p);
        assert_eq!(count(&out, Kernel::Diagscale), 2);
        assert_eq!(count(&out, Kernel::Gemm), 0);
        assert_eq!(cost(&out), 2 * 4 * 3);
        assert_same_results(&p, &out);
    }

    #[test]
    fn right_solves_split_by_columns() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix K(8,8)\nmatrix W(3,8)\nmatrix Z(3,8)\n\
             K := [A, 0; 0, B]\nZ := W*inv(K)\n",
        );
        let out = exploit_block_structure(&rewrite_inv_to_solve(&p));
        assert_eq!(count(&out, Kernel::Getrf), 2);
        assert_eq!(count(&out, Kernel::Getrs), 2);
        assert_same_results(&p, &out);
    }

    #[test]
    fn computed_operands_are_not_sliced() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix K(8,8)\nmatrix G(8,8)\n\
             vector v(8)\nvector x(8)\n\
             K := [A, 0; 0, B]\nx := inv(K)*(G*v)\n",
        );
        let out = exploit_block_structure(&rewrite_inv_to_solve(&p));
        assert_eq!(count(&out, Kernel::Getrf), 1, "computed rhs would re-run per block");
        assert_same_results(&p, &out);
    }

    #[test]
    fn uneven_grids_stay_monolithic() {
        let p = program(
            "matrix A(3,3)\nmatrix B(5,5)\nmatrix K(8,8)\nvector y(8)\nvector x(8)\n\
             K := [A, 0; 0, B]\nx := inv(K)*y\n",
        );
        let out = exploit_block_structure(&rewrite_inv_to_solve(&p));
        // Uneven blocks still split — sizes just differ.
        assert_eq!(count(&out, Kernel::Getrf), 2);
        assert_same_results(&p, &out);
    }

    #[test]
    fn splitting_is_idempotent() {
        let p = program(
            "matrix A(4,4)\nmatrix B(4,4)\nmatrix K(8,8)\nvector y(8)\nvector x(8)\n\
             K := [A, 0; 0, B]\nx := inv(K)*y\n",
        );
        let once = exploit_block_structure(&rewrite_inv_to_solve(&p));
        let twice = exploit_block_structure(&once);
        assert_eq!(once, twice);
    }
}
