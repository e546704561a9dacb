//! Canonicalization: transpose pushdown, n-ary flattening, scalar folding.

use super::{Coeff, Expr, Program, Sign, Stmt};

/// Rewrites an expression into canonical form. Idempotent: applying it to its
/// own output returns a structurally identical tree.
pub fn canonicalize(expr: Expr) -> Expr {
    let mut cur = expr;
    loop {
        let next = pass(cur.clone());
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// Canonicalizes every statement expression in a program.
pub fn canonicalize_program(mut program: Program) -> Program {
    fn walk(stmts: &mut [Stmt]) {
        for s in stmts {
            match s {
                Stmt::Assign { expr, .. } => *expr = canonicalize(expr.clone()),
                Stmt::For { body, .. } => walk(body),
            }
        }
    }
    walk(&mut program.stmts);
    program
}

/// One bottom-up rewrite sweep.
fn pass(expr: Expr) -> Expr {
    match expr {
        Expr::Operand(_) | Expr::Zero(_) => expr,
        Expr::Transpose(x) => transpose_of(pass(*x)),
        Expr::Inverse(x) => match pass(*x) {
            Expr::Inverse(y) => *y,
            y => Expr::Inverse(Box::new(y)),
        },
        Expr::ScalarMul(c, x) => scalar_mul(c, pass(*x)),
        Expr::Product(fs) => product(fs.into_iter().map(pass).collect()),
        Expr::Sum(ts) => sum(ts.into_iter().map(|(s, t)| (s, pass(t))).collect()),
        Expr::Block(g) => Expr::Block(
            g.into_iter().map(|row| row.into_iter().map(pass).collect()).collect(),
        ),
        Expr::Diag(x) => Expr::Diag(Box::new(pass(*x))),
        Expr::Element(x, r, c) => Expr::Element(Box::new(pass(*x)), r, c),
        Expr::Column(x, c) => Expr::Column(Box::new(pass(*x)), c),
        Expr::Solve { a, b, side } => {
            Expr::Solve { a: Box::new(pass(*a)), b: Box::new(pass(*b)), side }
        }
        Expr::Syrk { a, trans } => Expr::Syrk { a: Box::new(pass(*a)), trans },
        Expr::Syr2k { a, b, trans } => {
            Expr::Syr2k { a: Box::new(pass(*a)), b: Box::new(pass(*b)), trans }
        }
        Expr::Sub { child, row0, col0, rows, cols } => {
            Expr::Sub { child: Box::new(pass(*child)), row0, col0, rows, cols }
        }
    }
}

/// Transpose pushdown. Transposes survive only directly over leaves and
/// access nodes; everywhere else they distribute.
fn transpose_of(x: Expr) -> Expr {
    match x {
        Expr::Transpose(y) => *y,
        Expr::Product(fs) => {
            Expr::Product(fs.into_iter().rev().map(|f| transpose_of(f)).collect())
        }
        Expr::Sum(ts) => Expr::Sum(ts.into_iter().map(|(s, t)| (s, transpose_of(t))).collect()),
        Expr::ScalarMul(c, y) => Expr::ScalarMul(c, Box::new(transpose_of(*y))),
        Expr::Inverse(y) => Expr::Inverse(Box::new(transpose_of(*y))),
        Expr::Block(g) => {
            // Grid transpose with each block transposed.
            let rows = g.len();
            let cols = g.first().map(|r| r.len()).unwrap_or(0);
            let mut out = vec![Vec::with_capacity(rows); cols];
            let mut grid: Vec<Vec<Option<Expr>>> =
                g.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
            for (j, row) in out.iter_mut().enumerate() {
                for i in 0..rows {
                    row.push(transpose_of(grid[i][j].take().expect("grid cell")));
                }
            }
            Expr::Block(out)
        }
        Expr::Zero(s) => Expr::Zero(s.map(|s| s.transposed())),
        // Scalar results are invariant under transpose.
        Expr::Element(y, r, c) => Expr::Element(y, r, c),
        // Symmetric by construction.
        Expr::Syrk { a, trans } => Expr::Syrk { a, trans },
        Expr::Syr2k { a, b, trans } => Expr::Syr2k { a, b, trans },
        // (a⁻¹b)ᵀ = bᵀ·a⁻ᵀ: flip the solve side.
        Expr::Solve { a, b, side } => Expr::Solve {
            a: Box::new(transpose_of(*a)),
            b: Box::new(transpose_of(*b)),
            side: match side {
                super::Side::Left => super::Side::Right,
                super::Side::Right => super::Side::Left,
            },
        },
        // Operands and remaining access nodes keep a leaf transpose.
        other => Expr::Transpose(Box::new(other)),
    }
}

fn scalar_mul(c: Coeff, x: Expr) -> Expr {
    if c.lit < 0.0 {
        // Signs live on sum terms, never inside coefficients, so the surface
        // syntax (which has no negative literals, only `-` terms) can express
        // every canonical tree.
        let pos = Coeff { lit: -c.lit, syms: c.syms.clone() };
        return Expr::Sum(vec![(Sign::Minus, scalar_mul(pos, x))]);
    }
    match x {
        Expr::ScalarMul(c2, y) => scalar_mul(c.mul(&c2), *y),
        y if c.is_one() => y,
        y => Expr::ScalarMul(c, Box::new(y)),
    }
}

/// Flattens nested products, hoists scalar coefficients, and unwraps
/// single-factor products.
fn product(factors: Vec<Expr>) -> Expr {
    let mut coeff = Coeff::one();
    let mut flat = Vec::with_capacity(factors.len());
    for f in factors {
        match f {
            Expr::Product(inner) => flat.extend(inner),
            Expr::ScalarMul(c, y) => {
                coeff = coeff.mul(&c);
                match *y {
                    Expr::Product(inner) => flat.extend(inner),
                    other => flat.push(other),
                }
            }
            other => flat.push(other),
        }
    }
    let core = match flat.len() {
        0 => panic!("empty product"),
        1 => flat.pop().expect("single factor"),
        _ => Expr::Product(flat),
    };
    scalar_mul(coeff, core)
}

/// Flattens nested sums with sign propagation and unwraps single positive
/// terms.
fn sum(terms: Vec<(Sign, Expr)>) -> Expr {
    let mut flat = Vec::with_capacity(terms.len());
    for (sign, t) in terms {
        match t {
            Expr::Sum(inner) => {
                for (s2, t2) in inner {
                    flat.push((if sign == Sign::Minus { s2.flip() } else { s2 }, t2));
                }
            }
            other => flat.push((sign, other)),
        }
    }
    if flat.len() == 1 && flat[0].0 == Sign::Plus {
        return flat.pop().expect("single term").1;
    }
    Expr::Sum(flat)
}
