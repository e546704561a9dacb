//! Naive reference evaluation of checked programs.
//!
//! [`eval_naive`] executes the program tree literally: products multiply
//! left to right with triple loops, inverses go through Gauss-Jordan
//! elimination, loops iterate one index value at a time.  No clever
//! rewrites, no kernel dispatch — this is the semantics every optimized
//! plan is measured against.

use std::collections::HashMap;

use super::kernels::{gauss_jordan_inverse, matmul};
use super::{DenseMatrix, Environment, ExecError};
use crate::ir::{Bound, Coeff, Decls, Expr, Lhs, Program, Selector, Sign, Stmt};
use crate::scalar::Scalar;

/// Runs `program` on `inputs` (which must bind every declared name) and
/// returns the final state of all variables.
pub fn eval_naive<T: Scalar>(
    program: &Program,
    inputs: &Environment<T>,
) -> Result<Environment<T>, ExecError> {
    for decl in program.decls.iter() {
        inputs.require(&decl.name)?;
    }
    let mut env = inputs.clone();
    let mut binds = HashMap::new();
    exec_stmts(&program.stmts, &program.decls, &mut env, &mut binds)?;
    Ok(env)
}

fn exec_stmts<T: Scalar>(
    stmts: &[Stmt],
    decls: &Decls,
    env: &mut Environment<T>,
    binds: &mut HashMap<String, usize>,
) -> Result<(), ExecError> {
    for stmt in stmts {
        match stmt {
            Stmt::Assign { lhs, expr } => {
                let value = eval_expr(expr, decls, env, binds)?;
                match lhs {
                    Lhs::Var(name) => {
                        env.insert(name.clone(), value);
                    }
                    Lhs::Elem { name, row, col } => {
                        let r = resolve_selector(row, binds) - 1;
                        let c = col.as_ref().map_or(0, |s| resolve_selector(s, binds) - 1);
                        let mut m = env.require(name)?.clone();
                        m[(r, c)] = value.scalar_value();
                        env.insert(name.clone(), m);
                    }
                }
            }
            Stmt::For { index, lo, hi, body } => {
                let lo = resolve_bound(lo, decls);
                let hi = resolve_bound(hi, decls);
                for i in lo..=hi {
                    binds.insert(index.clone(), i);
                    exec_stmts(body, decls, env, binds)?;
                }
                binds.remove(index);
            }
        }
    }
    Ok(())
}

/// Loop bounds were validated during checking, so symbols resolve to
/// positive integer scalar literals here.
pub(crate) fn resolve_bound(b: &Bound, decls: &Decls) -> usize {
    match b {
        Bound::Lit(v) => *v as usize,
        Bound::Sym(s) => {
            let v = decls
                .get(s)
                .and_then(|d| d.value)
                .expect("checked loop bound symbol");
            v as usize
        }
    }
}

fn resolve_selector(s: &Selector, binds: &HashMap<String, usize>) -> usize {
    match s {
        Selector::Lit(v) => *v,
        Selector::Sym(name) => *binds.get(name).expect("checked loop index"),
    }
}

fn coeff_value<T: Scalar>(c: &Coeff, env: &Environment<T>) -> Result<T, ExecError> {
    let mut v = T::from_literal(c.lit);
    for sym in &c.syms {
        v = v * env.require(sym)?.scalar_value();
    }
    Ok(v)
}

/// Evaluates one checked expression.  Loop indices referenced by selectors
/// must be bound in `binds`.
pub(crate) fn eval_expr<T: Scalar>(
    expr: &Expr,
    decls: &Decls,
    env: &Environment<T>,
    binds: &HashMap<String, usize>,
) -> Result<DenseMatrix<T>, ExecError> {
    match expr {
        Expr::Operand(name) => Ok(env.require(name)?.clone()),
        Expr::Zero(shape) => {
            let shape = shape.expect("zeros are shaped during checking");
            Ok(DenseMatrix::from_shape(shape))
        }
        Expr::Product(factors) => {
            let mut acc = eval_expr(&factors[0], decls, env, binds)?;
            for f in &factors[1..] {
                let rhs = eval_expr(f, decls, env, binds)?;
                acc = matmul(&acc, &rhs);
            }
            Ok(acc)
        }
        Expr::Sum(terms) => {
            let first = eval_expr(&terms[0].1, decls, env, binds)?;
            let mut acc = match terms[0].0 {
                Sign::Plus => first,
                Sign::Minus => negate(first),
            };
            for (sign, term) in &terms[1..] {
                let v = eval_expr(term, decls, env, binds)?;
                for i in 0..acc.rows() {
                    for j in 0..acc.cols() {
                        acc[(i, j)] = match sign {
                            Sign::Plus => acc[(i, j)] + v[(i, j)],
                            Sign::Minus => acc[(i, j)] - v[(i, j)],
                        };
                    }
                }
            }
            Ok(acc)
        }
        Expr::Transpose(x) => Ok(eval_expr(x, decls, env, binds)?.transposed()),
        Expr::Inverse(x) => gauss_jordan_inverse(&eval_expr(x, decls, env, binds)?),
        Expr::ScalarMul(c, x) => {
            let s = coeff_value(c, env)?;
            let mut m = eval_expr(x, decls, env, binds)?;
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    m[(i, j)] = m[(i, j)] * s;
                }
            }
            Ok(m)
        }
        Expr::Block(grid) => {
            let cells: Vec<Vec<DenseMatrix<T>>> = grid
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|c| eval_expr(c, decls, env, binds))
                        .collect::<Result<_, _>>()
                })
                .collect::<Result<_, _>>()?;
            let total_rows: usize = cells.iter().map(|r| r[0].rows()).sum();
            let total_cols: usize = cells[0].iter().map(|c| c.cols()).sum();
            let mut out = DenseMatrix::zeros(total_rows, total_cols);
            let mut r0 = 0;
            for row in &cells {
                let mut c0 = 0;
                for cell in row {
                    out.set_sub(r0, c0, cell);
                    c0 += cell.cols();
                }
                r0 += row[0].rows();
            }
            Ok(out)
        }
        Expr::Diag(x) => {
            let m = eval_expr(x, decls, env, binds)?;
            let k = m.rows().min(m.cols());
            let mut out = DenseMatrix::zeros(k, 1);
            for i in 0..k {
                out[(i, 0)] = m[(i, i)];
            }
            Ok(out)
        }
        Expr::Element(x, i, j) => {
            let m = eval_expr(x, decls, env, binds)?;
            let r = resolve_selector(i, binds) - 1;
            let c = resolve_selector(j, binds) - 1;
            Ok(DenseMatrix::scalar(m[(r, c)]))
        }
        Expr::Column(x, j) => {
            let m = eval_expr(x, decls, env, binds)?;
            let c = resolve_selector(j, binds) - 1;
            let mut out = DenseMatrix::zeros(m.rows(), 1);
            for i in 0..m.rows() {
                out[(i, 0)] = m[(i, c)];
            }
            Ok(out)
        }
        Expr::Solve { a, b, side } => {
            let am = eval_expr(a, decls, env, binds)?;
            let bm = eval_expr(b, decls, env, binds)?;
            let inv = gauss_jordan_inverse(&am)?;
            Ok(match side {
                crate::ir::Side::Left => matmul(&inv, &bm),
                crate::ir::Side::Right => matmul(&bm, &inv),
            })
        }
        Expr::Syrk { a, trans } => {
            let m = eval_expr(a, decls, env, binds)?;
            let mt = m.transposed();
            Ok(if *trans { matmul(&mt, &m) } else { matmul(&m, &mt) })
        }
        Expr::Syr2k { a, b, trans } => {
            let am = eval_expr(a, decls, env, binds)?;
            let bm = eval_expr(b, decls, env, binds)?;
            let (p, q) = if *trans {
                (matmul(&am.transposed(), &bm), matmul(&bm.transposed(), &am))
            } else {
                (matmul(&am, &bm.transposed()), matmul(&bm, &am.transposed()))
            };
            let mut out = p;
            for i in 0..out.rows() {
                for j in 0..out.cols() {
                    out[(i, j)] = out[(i, j)] + q[(i, j)];
                }
            }
            Ok(out)
        }
        Expr::Sub { child, row0, col0, rows, cols } => {
            let m = eval_expr(child, decls, env, binds)?;
            Ok(m.sub(*row0, *col0, *rows, *cols))
        }
    }
}

fn negate<T: Scalar>(mut m: DenseMatrix<T>) -> DenseMatrix<T> {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            m[(i, j)] = -m[(i, j)];
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::generate_inputs;
    use crate::frontend::parse_program;

    fn run(src: &str, seed: u64) -> Environment {
        let program = parse_program(src).unwrap();
        let inputs: Environment = generate_inputs(&program, seed).unwrap();
        eval_naive(&program, &inputs).unwrap()
    }

    #[test]
    fn evaluates_a_product_sum_by_hand() {
        let src = "matrix A(2, 2)\nmatrix B(2, 2)\nmatrix C(2, 2)\nC := A * B + A - B\n";
        let program = parse_program(src).unwrap();
        let mut env: Environment = Environment::new();
        env.insert("A", DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        env.insert("B", DenseMatrix::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]));
        env.insert("C", DenseMatrix::zeros(2, 2));
        let out = eval_naive(&program, &env).unwrap();
        // A*B = [[19,22],[43,50]]; plus A minus B elementwise.
        let want = DenseMatrix::from_rows(&[&[15.0, 18.0], &[39.0, 46.0]]);
        assert_eq!(out.get("C").unwrap(), &want);
    }

    #[test]
    fn inverse_times_itself_is_identity() {
        let out = run(
            "matrix A(6, 6)\nmatrix I6(6, 6)\nI6 := inv(A) * A\n",
            77,
        );
        let i6 = out.get("I6").unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((i6[(i, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transposes_push_through_products() {
        let src = "matrix A(3, 4)\nmatrix B(3, 4)\nmatrix G(4, 4)\nG := A' * B\n";
        let out = run(src, 5);
        let g = out.get("G").unwrap();
        assert_eq!(g.shape(), crate::ir::Shape::new(4, 4));
    }

    #[test]
    fn loops_and_element_assignment_build_a_diagonal() {
        let src = "matrix A(4, 4)\nmatrix B(4, 4)\nmatrix M(4, 4)\n\
                   for i in 1:4 {\n    M[i,i] := (A * B)[i,i]\n}\n";
        let program = parse_program(src).unwrap();
        let inputs: Environment = generate_inputs(&program, 13).unwrap();
        let out = eval_naive(&program, &inputs).unwrap();
        let a = inputs.get("A").unwrap();
        let b = inputs.get("B").unwrap();
        let ab = matmul(a, b);
        let m = out.get("M").unwrap();
        for i in 0..4 {
            assert!((m[(i, i)] - ab[(i, i)]).abs() < 1e-14);
            for j in 0..4 {
                if i != j {
                    // Off-diagonal entries keep their initial random values.
                    assert_eq!(m[(i, j)], inputs.get("M").unwrap()[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn assigned_scalars_feed_later_coefficients() {
        let src = "vector x(5)\nvector y(5)\nscalar d\nvector z(5)\n\
                   d := x' * y\nz := d * x\n";
        let program = parse_program(src).unwrap();
        let inputs: Environment = generate_inputs(&program, 3).unwrap();
        let out = eval_naive(&program, &inputs).unwrap();
        let x = inputs.get("x").unwrap();
        let y = inputs.get("y").unwrap();
        let dot: f64 = (0..5).map(|i| x[(i, 0)] * y[(i, 0)]).sum();
        assert!((out.get("d").unwrap().scalar_value() - dot).abs() < 1e-14);
        for i in 0..5 {
            assert!((out.get("z").unwrap()[(i, 0)] - dot * x[(i, 0)]).abs() < 1e-14);
        }
    }

    #[test]
    fn update_statements_read_the_previous_value() {
        let src = "matrix A(3, 3)\nmatrix B(3, 3)\nmatrix C(3, 3)\nC := A * B + C\n";
        let program = parse_program(src).unwrap();
        let inputs: Environment = generate_inputs(&program, 9).unwrap();
        let out = eval_naive(&program, &inputs).unwrap();
        let ab = matmul(inputs.get("A").unwrap(), inputs.get("B").unwrap());
        let c0 = inputs.get("C").unwrap();
        let c = out.get("C").unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[(i, j)] - (ab[(i, j)] + c0[(i, j)])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn block_literals_assemble_with_zero_fill() {
        let src = "matrix A(2, 2)\nmatrix B(3, 3)\nmatrix K(5, 5)\nK := [A, 0; 0, B]\n";
        let program = parse_program(src).unwrap();
        let inputs: Environment = generate_inputs(&program, 21).unwrap();
        let out = eval_naive(&program, &inputs).unwrap();
        let k = out.get("K").unwrap();
        let a = inputs.get("A").unwrap();
        let b = inputs.get("B").unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(k[(i, j)], a[(i, j)]);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(k[(2 + i, 2 + j)], b[(i, j)]);
            }
        }
        for i in 0..2 {
            for j in 2..5 {
                assert_eq!(k[(i, j)], 0.0);
                assert_eq!(k[(j, i)], 0.0);
            }
        }
    }

    #[test]
    fn singular_inverse_is_an_error() {
        let src = "matrix Z(4, 4): zero\nmatrix W(4, 4)\nW := inv(Z)\n";
        let program = parse_program(src).unwrap();
        let inputs: Environment = generate_inputs(&program, 2).unwrap();
        let err = eval_naive(&program, &inputs).unwrap_err();
        assert!(matches!(err, ExecError::SingularMatrix { .. }), "{err}");
    }

    #[test]
    fn solve_and_rank_update_nodes_evaluate_consistently() {
        // These forms are produced by optimization passes, not the parser,
        // so build them directly and compare against their definitions.
        use crate::ir::{Expr, Side};
        let mut env: Environment = Environment::new();
        let a = DenseMatrix::from_rows(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let b = DenseMatrix::from_rows(&[&[1.0, 0.0], &[2.0, 1.0]]);
        env.insert("A", a.clone());
        env.insert("B", b.clone());
        let decls = Decls::new();
        let binds = HashMap::new();

        let solve = Expr::Solve {
            a: Box::new(Expr::operand("A")),
            b: Box::new(Expr::operand("B")),
            side: Side::Left,
        };
        let got = eval_expr(&solve, &decls, &env, &binds).unwrap();
        let want = matmul(&gauss_jordan_inverse(&a).unwrap(), &b);
        for i in 0..2 {
            for j in 0..2 {
                assert!((got[(i, j)] - want[(i, j)]).abs() < 1e-12);
            }
        }

        let syrk = Expr::Syrk { a: Box::new(Expr::operand("B")), trans: false };
        let got = eval_expr(&syrk, &decls, &env, &binds).unwrap();
        let want = matmul(&b, &b.transposed());
        assert_eq!(got, want);

        let syr2k = Expr::Syr2k {
            a: Box::new(Expr::operand("A")),
            b: Box::new(Expr::operand("B")),
            trans: true,
        };
        let got = eval_expr(&syr2k, &decls, &env, &binds).unwrap();
        let p = matmul(&a.transposed(), &b);
        let q = matmul(&b.transposed(), &a);
        for i in 0..2 {
            for j in 0..2 {
                assert!((got[(i, j)] - (p[(i, j)] + q[(i, j)])).abs() < 1e-14);
            }
        }
    }
}
