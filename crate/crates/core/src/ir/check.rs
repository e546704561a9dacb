//! Shape computation and whole-program validation.

use std::collections::BTreeSet;

use super::{
    canonicalize_program, Bound, Decls, Expr, IrError, Lhs, Program, PropertySet, Selector, Shape,
    Side, Stmt,
};

/// Computes the shape of a (zero-resolved) expression.
pub fn shape_of(expr: &Expr, decls: &Decls) -> Result<Shape, IrError> {
    match expr {
        Expr::Operand(name) => decls
            .get(name)
            .map(|d| d.shape)
            .ok_or_else(|| IrError::Undeclared { name: name.clone() }),
        Expr::Zero(shape) => shape.ok_or_else(|| IrError::ZeroBlock {
            detail: "zero block with unresolved shape".to_string(),
        }),
        Expr::Product(factors) => {
            let mut shape = shape_of(&factors[0], decls)?;
            for f in &factors[1..] {
                let fs = shape_of(f, decls)?;
                if shape.cols != fs.rows {
                    return Err(IrError::DimensionMismatch {
                        detail: format!("product of {} and {}", shape, fs),
                    });
                }
                shape = Shape::new(shape.rows, fs.cols);
            }
            Ok(shape)
        }
        Expr::Sum(terms) => {
            let shape = shape_of(&terms[0].1, decls)?;
            for (_, t) in &terms[1..] {
                let ts = shape_of(t, decls)?;
                if ts != shape {
                    return Err(IrError::DimensionMismatch {
                        detail: format!("sum of {} and {}", shape, ts),
                    });
                }
            }
            Ok(shape)
        }
        Expr::Transpose(x) => Ok(shape_of(x, decls)?.transposed()),
        Expr::Inverse(x) => {
            let s = shape_of(x, decls)?;
            if !s.is_square() {
                return Err(IrError::NonSquareInverse { rows: s.rows, cols: s.cols });
            }
            Ok(s)
        }
        Expr::ScalarMul(_, x) => shape_of(x, decls),
        Expr::Block(grid) => {
            let mut total_rows = 0;
            let mut total_cols = None;
            for row in grid {
                let mut row_cols = 0;
                let mut row_height = None;
                for cell in row {
                    let s = shape_of(cell, decls)?;
                    match row_height {
                        None => row_height = Some(s.rows),
                        Some(h) if h != s.rows => {
                            return Err(IrError::DimensionMismatch {
                                detail: format!("block row mixes heights {} and {}", h, s.rows),
                            })
                        }
                        _ => {}
                    }
                    row_cols += s.cols;
                }
                total_rows += row_height.unwrap_or(0);
                match total_cols {
                    None => total_cols = Some(row_cols),
                    Some(c) if c != row_cols => {
                        return Err(IrError::DimensionMismatch {
                            detail: format!("block rows have widths {} and {}", c, row_cols),
                        })
                    }
                    _ => {}
                }
            }
            Ok(Shape::new(total_rows, total_cols.unwrap_or(0)))
        }
        Expr::Diag(x) => {
            let s = shape_of(x, decls)?;
            Ok(Shape::new(s.rows.min(s.cols), 1))
        }
        Expr::Element(x, r, c) => {
            let s = shape_of(x, decls)?;
            check_selector(r, s.rows)?;
            check_selector(c, s.cols)?;
            Ok(Shape::new(1, 1))
        }
        Expr::Column(x, c) => {
            let s = shape_of(x, decls)?;
            check_selector(c, s.cols)?;
            Ok(Shape::new(s.rows, 1))
        }
        Expr::Solve { a, b, side } => {
            let sa = shape_of(a, decls)?;
            let sb = shape_of(b, decls)?;
            if !sa.is_square() {
                return Err(IrError::NonSquareInverse { rows: sa.rows, cols: sa.cols });
            }
            let ok = match side {
                Side::Left => sa.cols == sb.rows,
                Side::Right => sb.cols == sa.rows,
            };
            if !ok {
                return Err(IrError::DimensionMismatch {
                    detail: format!("solve of {} against {}", sa, sb),
                });
            }
            Ok(sb)
        }
        Expr::Syrk { a, trans } => {
            let s = shape_of(a, decls)?;
            let n = if *trans { s.cols } else { s.rows };
            Ok(Shape::new(n, n))
        }
        Expr::Syr2k { a, b, trans } => {
            let sa = shape_of(a, decls)?;
            let sb = shape_of(b, decls)?;
            if sa != sb {
                return Err(IrError::DimensionMismatch {
                    detail: format!("rank-2k update of {} and {}", sa, sb),
                });
            }
            let n = if *trans { sa.cols } else { sa.rows };
            Ok(Shape::new(n, n))
        }
        Expr::Sub { child, row0, col0, rows, cols } => {
            let s = shape_of(child, decls)?;
            if row0 + rows > s.rows || col0 + cols > s.cols {
                return Err(IrError::DimensionMismatch {
                    detail: format!(
                        "submatrix {}x{} at ({},{}) exceeds {}",
                        rows, cols, row0, col0, s
                    ),
                });
            }
            Ok(Shape::new(*rows, *cols))
        }
    }
}

fn check_selector(sel: &Selector, extent: usize) -> Result<(), IrError> {
    match sel {
        Selector::Lit(v) => {
            if *v == 0 || *v > extent {
                Err(IrError::BadSelector {
                    detail: format!("index {} out of range 1..{}", v, extent),
                })
            } else {
                Ok(())
            }
        }
        // Symbol validity (in-scope loop index) is checked at program level.
        Selector::Sym(_) => Ok(()),
    }
}

/// Resolves a loop bound to a concrete positive integer. Symbols must be
/// declared scalars with a positive integer literal initializer.
pub fn resolve_bound(bound: &Bound, decls: &Decls) -> Result<u64, IrError> {
    match bound {
        Bound::Lit(v) if *v >= 1 => Ok(*v),
        Bound::Lit(v) => Err(IrError::BadLoop { detail: format!("bound {} must be positive", v) }),
        Bound::Sym(name) => {
            let d = decls
                .get(name)
                .ok_or_else(|| IrError::Undeclared { name: name.clone() })?;
            let v = d.value.ok_or_else(|| IrError::BadLoop {
                detail: format!("bound symbol `{}` has no literal value", name),
            })?;
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(IrError::BadLoop {
                    detail: format!("bound symbol `{}` = {} is not a positive integer", name, v),
                })
            }
        }
    }
}

/// Validates a program: declarations are consistent, every referenced operand
/// is declared, zero blocks get concrete shapes, selectors and loop bounds are
/// valid, and assignment shapes match. Statement expressions are
/// canonicalized on the way out.
pub fn check_program(mut program: Program) -> Result<Program, IrError> {
    for d in program.decls.iter() {
        let needs_square = [
            PropertySet::SYMMETRIC,
            PropertySet::SPD,
            PropertySet::SPSD,
            PropertySet::IDENTITY,
        ];
        for flag in needs_square {
            if d.props.contains(flag) && !d.shape.is_square() {
                return Err(IrError::InvalidProperties {
                    name: d.name.clone(),
                    detail: format!("{} requires a square shape, got {}", flag, d.shape),
                });
            }
        }
        if d.props.contains(PropertySet::ZERO) && d.props.contains(PropertySet::SPD) {
            return Err(IrError::InvalidProperties {
                name: d.name.clone(),
                detail: "zero and spd are contradictory".to_string(),
            });
        }
    }

    let decls = program.decls.clone();
    let mut scope = Vec::new();
    check_stmts(&mut program.stmts, &decls, &mut scope)?;
    Ok(canonicalize_program(program))
}

fn check_stmts(
    stmts: &mut [Stmt],
    decls: &Decls,
    scope: &mut Vec<String>,
) -> Result<(), IrError> {
    for stmt in stmts {
        match stmt {
            Stmt::Assign { lhs, expr } => {
                resolve_zeros(expr, decls)?;
                check_expr(expr, decls, scope)?;
                let shape = shape_of(expr, decls)?;
                let target = decls
                    .get(lhs.name())
                    .ok_or_else(|| IrError::Undeclared { name: lhs.name().to_string() })?;
                match lhs {
                    Lhs::Var(_) => {
                        if target.shape != shape {
                            return Err(IrError::DimensionMismatch {
                                detail: format!(
                                    "assignment of {} expression to `{}` declared {}",
                                    shape, target.name, target.shape
                                ),
                            });
                        }
                    }
                    Lhs::Elem { name, row, col } => {
                        if !shape.is_scalar() {
                            return Err(IrError::DimensionMismatch {
                                detail: format!(
                                    "element assignment to `{}` needs a 1x1 value, got {}",
                                    name, shape
                                ),
                            });
                        }
                        check_scoped_selector(row, target.shape.rows, scope)?;
                        match col {
                            Some(c) => check_scoped_selector(c, target.shape.cols, scope)?,
                            None => {
                                if !target.shape.is_vector() {
                                    return Err(IrError::BadSelector {
                                        detail: format!(
                                            "`{}` is {}; a single index needs a vector",
                                            name, target.shape
                                        ),
                                    });
                                }
                            }
                        }
                    }
                }
            }
            Stmt::For { index, lo, hi, body } => {
                if decls.contains(index) || scope.contains(index) {
                    return Err(IrError::BadLoop {
                        detail: format!("loop index `{}` shadows an existing name", index),
                    });
                }
                resolve_bound(lo, decls)?;
                resolve_bound(hi, decls)?;
                scope.push(index.clone());
                check_stmts(body, decls, scope)?;
                scope.pop();
            }
        }
    }
    Ok(())
}

fn check_scoped_selector(
    sel: &Selector,
    extent: usize,
    scope: &[String],
) -> Result<(), IrError> {
    match sel {
        Selector::Lit(v) => {
            if *v == 0 || *v > extent {
                Err(IrError::BadSelector {
                    detail: format!("index {} out of range 1..{}", v, extent),
                })
            } else {
                Ok(())
            }
        }
        Selector::Sym(name) => {
            if scope.iter().any(|s| s == name) {
                Ok(())
            } else {
                Err(IrError::BadSelector {
                    detail: format!("selector symbol `{}` is not a loop index in scope", name),
                })
            }
        }
    }
}

/// Validates operand references, scalar symbol usage, and selector symbols.
fn check_expr(expr: &Expr, decls: &Decls, scope: &[String]) -> Result<(), IrError> {
    let mut names = BTreeSet::new();
    expr.referenced_operands(&mut names);
    for name in names {
        if !decls.contains(&name) {
            return Err(IrError::Undeclared { name });
        }
    }
    let mut sels = BTreeSet::new();
    expr.selector_symbols(&mut sels);
    for s in sels {
        if !scope.iter().any(|x| x == &s) {
            return Err(IrError::BadSelector {
                detail: format!("selector symbol `{}` is not a loop index in scope", s),
            });
        }
    }
    check_scalar_syms(expr, decls)
}

fn check_scalar_syms(expr: &Expr, decls: &Decls) -> Result<(), IrError> {
    match expr {
        Expr::ScalarMul(c, x) => {
            for s in &c.syms {
                let d = decls
                    .get(s)
                    .ok_or_else(|| IrError::Undeclared { name: s.clone() })?;
                if !d.shape.is_scalar() {
                    return Err(IrError::ScalarExpr {
                        detail: format!("`{}` used as a scalar coefficient but is {}", s, d.shape),
                    });
                }
            }
            check_scalar_syms(x, decls)
        }
        Expr::Product(fs) => fs.iter().try_for_each(|f| check_scalar_syms(f, decls)),
        Expr::Sum(ts) => ts.iter().try_for_each(|(_, t)| check_scalar_syms(t, decls)),
        Expr::Transpose(x) | Expr::Inverse(x) | Expr::Diag(x) => check_scalar_syms(x, decls),
        Expr::Block(g) => g.iter().flatten().try_for_each(|b| check_scalar_syms(b, decls)),
        Expr::Element(x, _, _) | Expr::Column(x, _) => check_scalar_syms(x, decls),
        Expr::Solve { a, b, .. } => {
            check_scalar_syms(a, decls)?;
            check_scalar_syms(b, decls)
        }
        Expr::Syrk { a, .. } => check_scalar_syms(a, decls),
        Expr::Syr2k { a, b, .. } => {
            check_scalar_syms(a, decls)?;
            check_scalar_syms(b, decls)
        }
        Expr::Sub { child, .. } => check_scalar_syms(child, decls),
        Expr::Operand(_) | Expr::Zero(_) => Ok(()),
    }
}

/// Resolves context-shaped zero blocks inside block literals. Zeros anywhere
/// else are rejected.
fn resolve_zeros(expr: &mut Expr, decls: &Decls) -> Result<(), IrError> {
    match expr {
        Expr::Block(grid) => {
            for row in grid.iter_mut() {
                for cell in row.iter_mut() {
                    if !matches!(cell, Expr::Zero(_)) {
                        resolve_zeros(cell, decls)?;
                    }
                }
            }
            // Infer row heights and column widths from resolved siblings.
            let nrows = grid.len();
            let ncols = grid.first().map(|r| r.len()).unwrap_or(0);
            if grid.iter().any(|r| r.len() != ncols) {
                return Err(IrError::DimensionMismatch {
                    detail: "ragged block grid".to_string(),
                });
            }
            let mut heights = vec![None; nrows];
            let mut widths = vec![None; ncols];
            for (i, row) in grid.iter().enumerate() {
                for (j, cell) in row.iter().enumerate() {
                    if matches!(cell, Expr::Zero(None)) {
                        continue;
                    }
                    let s = shape_of(cell, decls)?;
                    heights[i].get_or_insert(s.rows);
                    widths[j].get_or_insert(s.cols);
                }
            }
            for (i, row) in grid.iter_mut().enumerate() {
                for (j, cell) in row.iter_mut().enumerate() {
                    if let Expr::Zero(shape @ None) = cell {
                        match (heights[i], widths[j]) {
                            (Some(h), Some(w)) => *shape = Some(Shape::new(h, w)),
                            _ => {
                                return Err(IrError::ZeroBlock {
                                    detail: format!(
                                        "cannot infer shape of zero block at ({},{})",
                                        i + 1,
                                        j + 1
                                    ),
                                })
                            }
                        }
                    }
                }
            }
            Ok(())
        }
        Expr::Zero(None) => Err(IrError::ZeroBlock {
            detail: "zero literal outside a block literal".to_string(),
        }),
        Expr::Zero(Some(_)) | Expr::Operand(_) => Ok(()),
        Expr::Product(fs) => fs.iter_mut().try_for_each(|f| resolve_zeros(f, decls)),
        Expr::Sum(ts) => ts.iter_mut().try_for_each(|(_, t)| resolve_zeros(t, decls)),
        Expr::Transpose(x) | Expr::Inverse(x) | Expr::ScalarMul(_, x) | Expr::Diag(x) => {
            resolve_zeros(x, decls)
        }
        Expr::Element(x, _, _) | Expr::Column(x, _) => resolve_zeros(x, decls),
        Expr::Solve { a, b, .. } => {
            resolve_zeros(a, decls)?;
            resolve_zeros(b, decls)
        }
        Expr::Syrk { a, .. } => resolve_zeros(a, decls),
        Expr::Syr2k { a, b, .. } => {
            resolve_zeros(a, decls)?;
            resolve_zeros(b, decls)
        }
        Expr::Sub { child, .. } => resolve_zeros(child, decls),
    }
}
