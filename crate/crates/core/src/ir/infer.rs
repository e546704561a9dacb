//! Structural property inference.
//!
//! The rules are deliberately conservative: a flag is reported only when it
//! holds for every instantiation of the operands consistent with their
//! declarations. In particular `A·Aᵀ` is inferred positive *semi*-definite
//! (rank is not tracked), and congruences like `XᵀMX` are not recognized.

use super::{Coeff, Decls, Expr, PropertySet, Side, Sign};

/// Infers structural properties for a shape-checked expression.
pub fn infer_properties(expr: &Expr, decls: &Decls) -> PropertySet {
    let p = PropertySet::FULL;
    match expr {
        Expr::Operand(name) => decls.get(name).map(|d| d.props).unwrap_or(p),
        Expr::Zero(_) => PropertySet::new(PropertySet::ZERO),
        Expr::Transpose(x) => infer_properties(x, decls).swap_triangles(),
        Expr::Inverse(x) => inverse_props(infer_properties(x, decls)),
        Expr::ScalarMul(c, x) => scalar_mul_props(c, infer_properties(x, decls), decls),
        Expr::Product(factors) => {
            if factors.len() == 2 {
                if let Some(sym) = gram_pair(&factors[0], &factors[1]) {
                    let base = product_props(
                        infer_properties(&factors[0], decls),
                        infer_properties(&factors[1], decls),
                    );
                    return base.union(sym);
                }
            }
            let mut acc = infer_properties(&factors[0], decls);
            for f in &factors[1..] {
                acc = product_props(acc, infer_properties(f, decls));
            }
            acc
        }
        Expr::Sum(terms) => sum_props(terms, decls),
        Expr::Block(grid) => block_props(grid, decls),
        Expr::Diag(x) | Expr::Column(x, _) => {
            if infer_properties(x, decls).contains(PropertySet::ZERO) {
                PropertySet::new(PropertySet::ZERO)
            } else {
                p
            }
        }
        Expr::Element(_, _, _) => p,
        Expr::Solve { a, b, side } => {
            let ia = inverse_props(infer_properties(a, decls));
            let pb = infer_properties(b, decls);
            match side {
                Side::Left => product_props(ia, pb),
                Side::Right => product_props(pb, ia),
            }
        }
        Expr::Syrk { .. } => PropertySet::new(PropertySet::SYMMETRIC.union(PropertySet::SPSD)),
        Expr::Syr2k { .. } => PropertySet::new(PropertySet::SYMMETRIC),
        Expr::Sub { child, .. } => {
            if infer_properties(child, decls).contains(PropertySet::ZERO) {
                PropertySet::new(PropertySet::ZERO)
            } else {
                p
            }
        }
    }
}

/// Detects `X·Xᵀ` / `Xᵀ·X` pairs (structural equality after
/// canonicalization).
fn gram_pair(left: &Expr, right: &Expr) -> Option<PropertySet> {
    let matches = match (left, right) {
        (x, Expr::Transpose(y)) => x == y.as_ref(),
        (Expr::Transpose(x), y) => x.as_ref() == y,
        _ => false,
    };
    if matches {
        Some(PropertySet::new(PropertySet::SYMMETRIC.union(PropertySet::SPSD)))
    } else {
        None
    }
}

/// Inverse preserves symmetry, definiteness, and triangular/diagonal
/// structure; semi-definiteness is dropped (the input may be singular) and a
/// zero input is a runtime error, so it contributes nothing.
pub(crate) fn inverse_props(p: PropertySet) -> PropertySet {
    let keep = PropertySet::SYMMETRIC
        .union(PropertySet::SPD)
        .union(PropertySet::DIAGONAL)
        .union(PropertySet::LOWER_TRIANGULAR)
        .union(PropertySet::UPPER_TRIANGULAR)
        .union(PropertySet::IDENTITY)
        .union(PropertySet::BLOCK_DIAGONAL);
    let mut out = p.intersect(keep);
    if p.contains(PropertySet::SPD) {
        // Re-establish SPSD via closure (it was dropped above).
        out = out.union(PropertySet::SPD);
    }
    PropertySet::new(out)
}

fn scalar_mul_props(c: &Coeff, p: PropertySet, decls: &Decls) -> PropertySet {
    let keep = PropertySet::SYMMETRIC
        .union(PropertySet::DIAGONAL)
        .union(PropertySet::LOWER_TRIANGULAR)
        .union(PropertySet::UPPER_TRIANGULAR)
        .union(PropertySet::ZERO)
        .union(PropertySet::BLOCK_DIAGONAL);
    let mut out = p.intersect(keep);
    // Definiteness survives only a coefficient whose sign is known positive
    // at compile time.
    if matches!(c.known_value(decls), Some(v) if v > 0.0) {
        out = out.union(p.intersect(PropertySet::SPD.union(PropertySet::SPSD)));
    }
    PropertySet::new(out)
}

/// Pairwise product rule.
pub(crate) fn product_props(a: PropertySet, b: PropertySet) -> PropertySet {
    if a.contains(PropertySet::ZERO) || b.contains(PropertySet::ZERO) {
        return PropertySet::new(PropertySet::ZERO);
    }
    if a.contains(PropertySet::IDENTITY) {
        return b;
    }
    if b.contains(PropertySet::IDENTITY) {
        return a;
    }
    let shared = PropertySet::DIAGONAL
        .union(PropertySet::LOWER_TRIANGULAR)
        .union(PropertySet::UPPER_TRIANGULAR);
    PropertySet::new(a.intersect(b).intersect(shared))
}

fn sum_props(terms: &[(Sign, Expr)], decls: &Decls) -> PropertySet {
    let props: Vec<PropertySet> = terms.iter().map(|(_, t)| infer_properties(t, decls)).collect();
    // Flags stable under signed addition.
    let stable = PropertySet::SYMMETRIC
        .union(PropertySet::DIAGONAL)
        .union(PropertySet::LOWER_TRIANGULAR)
        .union(PropertySet::UPPER_TRIANGULAR)
        .union(PropertySet::ZERO)
        .union(PropertySet::BLOCK_DIAGONAL);
    let mut acc = props[0];
    for p in &props[1..] {
        acc = acc.intersect(*p);
    }
    let mut out = acc.intersect(stable);
    // Definiteness needs every sign positive: SPSD terms keep SPSD, and one
    // SPD term among SPSD terms makes the sum SPD.
    let all_plus = terms.iter().all(|(s, _)| *s == Sign::Plus);
    if all_plus && props.iter().all(|p| p.contains(PropertySet::SPSD)) {
        out = out.union(PropertySet::SPSD);
        if props.iter().any(|p| p.contains(PropertySet::SPD)) {
            out = out.union(PropertySet::SPD);
        }
    }
    PropertySet::new(out)
}

/// Block grid rules: a k×k grid with zero off-diagonal blocks is
/// block-diagonal and inherits flags shared by its diagonal blocks; grids
/// that are block-triangular with triangular diagonal blocks are triangular.
fn block_props(grid: &[Vec<Expr>], decls: &Decls) -> PropertySet {
    let props: Vec<Vec<PropertySet>> = grid
        .iter()
        .map(|row| row.iter().map(|c| infer_properties(c, decls)).collect())
        .collect();
    let nrows = grid.len();
    let ncols = grid.first().map(|r| r.len()).unwrap_or(0);

    if props.iter().flatten().all(|p| p.contains(PropertySet::ZERO)) {
        return PropertySet::new(PropertySet::ZERO);
    }
    if nrows != ncols || nrows < 2 {
        return PropertySet::FULL;
    }

    let zero_at = |i: usize, j: usize| props[i][j].contains(PropertySet::ZERO);
    let square_diag = (0..nrows).all(|i| {
        shape_is_square(&grid[i][i], decls)
    });

    let off_diag_zero = (0..nrows)
        .all(|i| (0..ncols).all(|j| i == j || zero_at(i, j)));
    if off_diag_zero && square_diag {
        let inherit = PropertySet::SYMMETRIC
            .union(PropertySet::SPD)
            .union(PropertySet::SPSD)
            .union(PropertySet::DIAGONAL)
            .union(PropertySet::LOWER_TRIANGULAR)
            .union(PropertySet::UPPER_TRIANGULAR)
            .union(PropertySet::IDENTITY);
        let mut shared = props[0][0];
        for i in 1..nrows {
            shared = shared.intersect(props[i][i]);
        }
        return PropertySet::new(
            shared.intersect(inherit).union(PropertySet::BLOCK_DIAGONAL),
        );
    }

    // Block lower-triangular: everything strictly above the diagonal is zero
    // and the diagonal blocks are lower triangular. Mirrored for upper.
    if square_diag {
        let upper_zero =
            (0..nrows).all(|i| (i + 1..ncols).all(|j| zero_at(i, j)));
        let lower_zero = (0..nrows).all(|i| (0..i).all(|j| zero_at(i, j)));
        let diag_lt =
            (0..nrows).all(|i| props[i][i].contains(PropertySet::LOWER_TRIANGULAR));
        let diag_ut =
            (0..nrows).all(|i| props[i][i].contains(PropertySet::UPPER_TRIANGULAR));
        let mut out = PropertySet::FULL;
        if upper_zero && diag_lt {
            out = out.union(PropertySet::LOWER_TRIANGULAR);
        }
        if lower_zero && diag_ut {
            out = out.union(PropertySet::UPPER_TRIANGULAR);
        }
        return PropertySet::new(out);
    }
    PropertySet::FULL
}

fn shape_is_square(e: &Expr, decls: &Decls) -> bool {
    super::shape_of(e, decls).map(|s| s.is_square()).unwrap_or(false)
}
