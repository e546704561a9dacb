//! Reference numeric kernels shared by the naive evaluator and the plan
//! executor: triple-loop multiplication, substitutions, Gauss-Jordan
//! inversion, partially pivoted LU, unpivoted Cholesky, and a
//! diagonally-pivoted LDL' factorization.
//!
//! Everything here favours clarity over speed and uses exact elementwise
//! loops so the behaviour is easy to audit.  All factorizations report
//! [`ExecError::SingularMatrix`] when a pivot falls below
//! `Scalar::pivot_tol()` relative to the matrix's largest entry.

use super::{DenseMatrix, ExecError};
use crate::scalar::Scalar;

fn singular(detail: impl Into<String>) -> ExecError {
    ExecError::SingularMatrix { detail: detail.into() }
}

/// Plain triple-loop product; shapes must conform.
pub(crate) fn matmul<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> DenseMatrix<T> {
    assert_eq!(a.cols(), b.rows(), "inner dimensions must agree");
    let mut c = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for k in 0..a.cols() {
            let aik = a[(i, k)];
            if aik == T::zero() {
                continue;
            }
            for j in 0..b.cols() {
                c[(i, j)] = c[(i, j)] + aik * b[(k, j)];
            }
        }
    }
    c
}

/// Inverts a square matrix by Gauss-Jordan elimination on `[A | I]`.
///
/// Pivoting is lazy: rows are only swapped when the natural pivot is
/// negligible.  Besides being simple, this keeps the inverse of a
/// triangular matrix exactly triangular (no row ever moves, and the
/// eliminations touch structural zeros only with zero multipliers).
pub fn gauss_jordan_inverse<T: Scalar>(a: &DenseMatrix<T>) -> Result<DenseMatrix<T>, ExecError> {
    assert!(a.rows() == a.cols(), "inverse of a non-square matrix");
    let n = a.rows();
    let tol = T::pivot_tol() * a.max_abs().max(T::one());

    // Augmented system [A | I], eliminated in place.
    let mut aug = DenseMatrix::<T>::zeros(n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = a[(i, j)];
        }
        aug[(i, n + i)] = T::one();
    }

    for k in 0..n {
        if aug[(k, k)].abs() <= tol {
            let swap = (k + 1..n)
                .max_by(|&r, &s| {
                    aug[(r, k)]
                        .abs()
                        .partial_cmp(&aug[(s, k)].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .filter(|&r| aug[(r, k)].abs() > tol);
            let Some(r) = swap else {
                return Err(singular(format!("zero pivot in column {k} during inversion")));
            };
            for j in 0..2 * n {
                let tmp = aug[(k, j)];
                aug[(k, j)] = aug[(r, j)];
                aug[(r, j)] = tmp;
            }
        }
        let p = aug[(k, k)];
        for j in 0..2 * n {
            aug[(k, j)] = aug[(k, j)] / p;
        }
        for r in 0..n {
            if r == k {
                continue;
            }
            let f = aug[(r, k)];
            if f == T::zero() {
                continue;
            }
            for j in 0..2 * n {
                aug[(r, j)] = aug[(r, j)] - f * aug[(k, j)];
            }
        }
    }

    let mut inv = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            inv[(i, j)] = aug[(i, n + j)];
        }
    }
    Ok(inv)
}

/// Solves `op(T)·X = B` by row substitution, where `T`'s data lives in its
/// `lower` or upper triangle and `unit` marks an implicit unit diagonal.
pub(crate) fn tri_solve<T: Scalar>(
    t: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
    lower: bool,
    unit: bool,
    trans: bool,
) -> Result<DenseMatrix<T>, ExecError> {
    let n = t.rows();
    assert!(t.cols() == n && b.rows() == n, "triangular solve shapes must conform");
    let tol = T::pivot_tol() * t.max_abs().max(T::one());
    // Coefficient of the transposed system; transposing flips the triangle.
    let coef = |i: usize, j: usize| if trans { t[(j, i)] } else { t[(i, j)] };
    let effective_lower = lower != trans;

    let mut x = b.clone();
    let order: Vec<usize> = if effective_lower {
        (0..n).collect()
    } else {
        (0..n).rev().collect()
    };
    for &i in &order {
        let diag = if unit { T::one() } else { coef(i, i) };
        if diag.abs() <= tol {
            return Err(singular(format!("triangular solve hit a zero diagonal at {i}")));
        }
        for col in 0..b.cols() {
            let mut s = x[(i, col)];
            let js: Box<dyn Iterator<Item = usize>> = if effective_lower {
                Box::new(0..i)
            } else {
                Box::new(i + 1..n)
            };
            for j in js {
                s = s - coef(i, j) * x[(j, col)];
            }
            x[(i, col)] = s / diag;
        }
    }
    Ok(x)
}

/// LU factorization with partial (row) pivoting: `P·A = L·U`.
///
/// `lu` packs unit-lower `L` below the diagonal and `U` on and above it;
/// `perm[i]` is the original row now sitting at position `i`.
pub(crate) struct Lu<T: Scalar> {
    pub lu: DenseMatrix<T>,
    pub perm: Vec<usize>,
}

pub(crate) fn lu_factor<T: Scalar>(a: &DenseMatrix<T>) -> Result<Lu<T>, ExecError> {
    assert!(a.rows() == a.cols(), "LU of a non-square matrix");
    let n = a.rows();
    let tol = T::pivot_tol() * a.max_abs().max(T::one());
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();

    for k in 0..n {
        let pivot_row = (k..n)
            .max_by(|&r, &s| {
                lu[(r, k)]
                    .abs()
                    .partial_cmp(&lu[(s, k)].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if lu[(pivot_row, k)].abs() <= tol {
            return Err(singular(format!("LU pivot column {k} is negligible")));
        }
        if pivot_row != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(pivot_row, j)];
                lu[(pivot_row, j)] = tmp;
            }
            perm.swap(k, pivot_row);
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let m = lu[(i, k)] / pivot;
            lu[(i, k)] = m;
            if m == T::zero() {
                continue;
            }
            for j in k + 1..n {
                lu[(i, j)] = lu[(i, j)] - m * lu[(k, j)];
            }
        }
    }
    Ok(Lu { lu, perm })
}

/// Solves `A·X = B` (or `A'·X = B` with `trans`) from a computed LU factor.
pub(crate) fn lu_solve<T: Scalar>(
    f: &Lu<T>,
    b: &DenseMatrix<T>,
    trans: bool,
) -> Result<DenseMatrix<T>, ExecError> {
    let n = f.lu.rows();
    assert_eq!(b.rows(), n, "right-hand side height must match the factor");
    if !trans {
        // A = P'LU: apply P to B, then L then U.
        let mut pb = DenseMatrix::zeros(n, b.cols());
        for i in 0..n {
            for j in 0..b.cols() {
                pb[(i, j)] = b[(f.perm[i], j)];
            }
        }
        let y = tri_solve(&f.lu, &pb, true, true, false)?;
        tri_solve(&f.lu, &y, false, false, false)
    } else {
        // A' = U'L'P: solve U'y = B, L'z = y, then X = P'z.
        let y = tri_solve(&f.lu, b, false, false, true)?;
        let z = tri_solve(&f.lu, &y, true, true, true)?;
        let mut x = DenseMatrix::zeros(n, b.cols());
        for i in 0..n {
            for j in 0..b.cols() {
                x[(f.perm[i], j)] = z[(i, j)];
            }
        }
        Ok(x)
    }
}

/// Explicit inverse from an LU factor (solves against the identity).
pub(crate) fn lu_inverse<T: Scalar>(f: &Lu<T>) -> Result<DenseMatrix<T>, ExecError> {
    let n = f.lu.rows();
    lu_solve(f, &DenseMatrix::identity(n), false)
}

/// Unpivoted Cholesky factorization of an SPD matrix: returns lower `L`
/// with `L·L' = A`.  Fails on any non-positive (or negligible) pivot, which
/// doubles as the numeric positive-definiteness test.
pub(crate) fn cholesky<T: Scalar>(a: &DenseMatrix<T>) -> Result<DenseMatrix<T>, ExecError> {
    assert!(a.rows() == a.cols(), "Cholesky of a non-square matrix");
    let n = a.rows();
    let tol = T::pivot_tol() * a.max_abs().max(T::one());
    let mut l = DenseMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            return Err(singular(format!("matrix is not positive definite (pivot {j})")));
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// Solves `A·X = B` from a Cholesky factor `L`.
pub(crate) fn chol_solve<T: Scalar>(
    l: &DenseMatrix<T>,
    b: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>, ExecError> {
    let y = tri_solve(l, b, true, false, false)?;
    tri_solve(l, &y, true, false, true)
}

/// Semidefiniteness probe: an incomplete Cholesky that tolerates exact
/// rank deficiency.  A pivot may be (numerically) zero only if the rest of
/// its column is zero too; a negative pivot or a zero pivot with mass
/// below it disproves semidefiniteness.
pub(crate) fn is_positive_semidefinite<T: Scalar>(a: &DenseMatrix<T>) -> bool {
    if a.rows() != a.cols() {
        return false;
    }
    let n = a.rows();
    let scale = a.max_abs().max(T::one());
    let tol = T::prop_tol() * scale;
    let mut l = DenseMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return false;
        }
        if d <= tol {
            // Rank-deficient direction: the whole column must vanish.
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                if s.abs() > tol * T::from_literal(n as f64) {
                    return false;
                }
            }
            continue;
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    true
}

/// LDL' factorization of a symmetric (possibly indefinite) matrix with
/// greedy diagonal pivoting: at each step the largest remaining diagonal
/// entry is brought to the front by a symmetric permutation.  This handles
/// the random symmetric matrices the test harness produces; matrices whose
/// remaining diagonal vanishes entirely (which need 2x2 block pivots) are
/// reported as singular to working precision.
pub(crate) struct Ldlt<T: Scalar> {
    pub l: DenseMatrix<T>,
    pub d: Vec<T>,
    pub perm: Vec<usize>,
}

pub(crate) fn ldlt_factor<T: Scalar>(a: &DenseMatrix<T>) -> Result<Ldlt<T>, ExecError> {
    assert!(a.rows() == a.cols(), "LDL' of a non-square matrix");
    let n = a.rows();
    let tol = T::pivot_tol() * a.max_abs().max(T::one());
    // Work on PAP' in place, tracking the permutation.
    let mut w = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = DenseMatrix::<T>::identity(n);
    let mut d = vec![T::zero(); n];

    for k in 0..n {
        let best = (k..n)
            .max_by(|&r, &s| {
                w[(r, r)]
                    .abs()
                    .partial_cmp(&w[(s, s)].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap();
        if w[(best, best)].abs() <= tol {
            return Err(singular(format!(
                "LDL' ran out of usable diagonal pivots at step {k}"
            )));
        }
        if best != k {
            // Symmetric row/column swap on the working matrix, plus the
            // corresponding swap of already-computed multiplier rows.
            for j in 0..n {
                let tmp = w[(k, j)];
                w[(k, j)] = w[(best, j)];
                w[(best, j)] = tmp;
            }
            for i in 0..n {
                let tmp = w[(i, k)];
                w[(i, k)] = w[(i, best)];
                w[(i, best)] = tmp;
            }
            for j in 0..k {
                let tmp = l[(k, j)];
                l[(k, j)] = l[(best, j)];
                l[(best, j)] = tmp;
            }
            perm.swap(k, best);
        }
        let pivot = w[(k, k)];
        d[k] = pivot;
        for i in k + 1..n {
            let m = w[(i, k)] / pivot;
            l[(i, k)] = m;
            if m == T::zero() {
                continue;
            }
            for j in k + 1..n {
                w[(i, j)] = w[(i, j)] - m * w[(k, j)];
            }
        }
    }
    Ok(Ldlt { l, d, perm })
}

/// Solves `A·X = B` from an LDL' factor of `P·A·P' = L·D·L'`.
pub(crate) fn ldlt_solve<T: Scalar>(
    f: &Ldlt<T>,
    b: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>, ExecError> {
    let n = f.l.rows();
    assert_eq!(b.rows(), n, "right-hand side height must match the factor");
    let mut pb = DenseMatrix::zeros(n, b.cols());
    for i in 0..n {
        for j in 0..b.cols() {
            pb[(i, j)] = b[(f.perm[i], j)];
        }
    }
    let mut y = tri_solve(&f.l, &pb, true, true, false)?;
    for i in 0..n {
        for j in 0..b.cols() {
            y[(i, j)] = y[(i, j)] / f.d[i];
        }
    }
    let z = tri_solve(&f.l, &y, true, true, true)?;
    let mut x = DenseMatrix::zeros(n, b.cols());
    for i in 0..n {
        for j in 0..b.cols() {
            x[(f.perm[i], j)] = z[(i, j)];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::SplitMix64;

    fn random_square(n: usize, seed: u64) -> DenseMatrix<f64> {
        let mut rng = SplitMix64::new(seed);
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = rng.next_unit();
            }
        }
        m
    }

    fn max_diff(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
            }
        }
        worst
    }

    #[test]
    fn lu_reconstructs_pa() {
        let a = random_square(5, 11);
        let f = lu_factor(&a).unwrap();
        let n = 5;
        let mut l = DenseMatrix::<f64>::identity(n);
        let mut u = DenseMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if j < i {
                    l[(i, j)] = f.lu[(i, j)];
                } else {
                    u[(i, j)] = f.lu[(i, j)];
                }
            }
        }
        let mut pa = DenseMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                pa[(i, j)] = a[(f.perm[i], j)];
            }
        }
        assert!(max_diff(&matmul(&l, &u), &pa) < 1e-12);
    }

    #[test]
    fn lu_solve_agrees_with_gauss_jordan_both_ways() {
        let a = random_square(6, 21);
        let b = random_square(6, 22);
        let f = lu_factor(&a).unwrap();
        let inv = gauss_jordan_inverse(&a).unwrap();
        assert!(max_diff(&lu_solve(&f, &b, false).unwrap(), &matmul(&inv, &b)) < 1e-10);
        let inv_t = inv.transposed();
        assert!(max_diff(&lu_solve(&f, &b, true).unwrap(), &matmul(&inv_t, &b)) < 1e-10);
    }

    #[test]
    fn lu_reports_singularity() {
        let mut a = random_square(4, 3);
        for j in 0..4 {
            // Make row 2 a copy of row 1.
            a[(2, j)] = a[(1, j)];
        }
        assert!(matches!(
            lu_factor(&a),
            Err(ExecError::SingularMatrix { .. })
        ));
    }

    #[test]
    fn cholesky_reconstructs_spd_matrices() {
        let m = random_square(5, 31);
        let mut a = matmul(&m, &m.transposed());
        for i in 0..5 {
            a[(i, i)] += 5.0;
        }
        let l = cholesky(&a).unwrap();
        assert!(max_diff(&matmul(&l, &l.transposed()), &a) < 1e-12);
        // Solving against b matches the explicit inverse.
        let b = random_square(5, 32);
        let inv = gauss_jordan_inverse(&a).unwrap();
        assert!(max_diff(&chol_solve(&l, &b).unwrap(), &matmul(&inv, &b)) < 1e-10);
    }

    #[test]
    fn cholesky_rejects_indefinite_matrices() {
        let a = DenseMatrix::from_rows(&[&[0.0, 5.0], &[5.0, 0.0]]);
        assert!(cholesky(&a).is_err());
        assert!(!is_positive_semidefinite(&a));
        // But a genuinely rank-deficient PSD matrix passes the probe.
        let one = DenseMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert!(is_positive_semidefinite(&one));
        assert!(is_positive_semidefinite(&DenseMatrix::<f64>::zeros(3, 3)));
    }

    #[test]
    fn ldlt_solves_symmetric_indefinite_systems() {
        let m = random_square(6, 41);
        let mut a = DenseMatrix::<f64>::zeros(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                a[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        let f = ldlt_factor(&a).unwrap();
        let b = random_square(6, 42);
        let inv = gauss_jordan_inverse(&a).unwrap();
        assert!(max_diff(&ldlt_solve(&f, &b).unwrap(), &matmul(&inv, &b)) < 1e-9);
    }

    #[test]
    fn triangular_solves_run_in_both_orientations() {
        let mut l = random_square(5, 51);
        for i in 0..5 {
            for j in i + 1..5 {
                l[(i, j)] = 0.0;
            }
            l[(i, i)] = 2.0 + l[(i, i)].abs();
        }
        let b = random_square(5, 52);
        let inv = gauss_jordan_inverse(&l).unwrap();
        assert!(max_diff(&tri_solve(&l, &b, true, false, false).unwrap(), &matmul(&inv, &b)) < 1e-11);
        let inv_t = inv.transposed();
        assert!(max_diff(&tri_solve(&l, &b, true, false, true).unwrap(), &matmul(&inv_t, &b)) < 1e-11);
        // Solving with the identity right-hand side inverts exactly the
        // triangular pattern: the result stays lower-triangular.
        let linv = tri_solve(&l, &DenseMatrix::identity(5), true, false, false).unwrap();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_eq!(linv[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn gauss_jordan_keeps_triangular_inverses_triangular() {
        let mut l = random_square(6, 61);
        for i in 0..6 {
            for j in i + 1..6 {
                l[(i, j)] = 0.0;
            }
            l[(i, i)] = 1.0 + l[(i, i)].abs();
        }
        let inv = gauss_jordan_inverse(&l).unwrap();
        for i in 0..6 {
            for j in i + 1..6 {
                assert_eq!(inv[(i, j)], 0.0, "fill-in at ({i},{j})");
            }
        }
        assert!(max_diff(&matmul(&inv, &l), &DenseMatrix::identity(6)) < 1e-12);
    }

    #[test]
    fn gauss_jordan_reports_singular_input() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(
            gauss_jordan_inverse(&a),
            Err(ExecError::SingularMatrix { .. })
        ));
    }

    #[test]
    fn kernels_are_bitwise_deterministic() {
        let a = random_square(5, 71);
        let f1 = lu_factor(&a).unwrap();
        let f2 = lu_factor(&a).unwrap();
        assert_eq!(f1.lu.data(), f2.lu.data());
        assert_eq!(f1.perm, f2.perm);
        let inv1 = gauss_jordan_inverse(&a).unwrap();
        let inv2 = gauss_jordan_inverse(&a).unwrap();
        assert_eq!(inv1.data(), inv2.data());
    }
}
