//! Scalar abstraction for the numeric executor.
//!
//! All kernel and evaluator code is generic over [`Scalar`] so the same
//! reference implementations serve `f32` and `f64`. Tolerances that depend on
//! the machine epsilon are supplied per type.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type usable by the executor.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Tolerance for structural property checks (symmetry residuals and the
    /// like) on matrices built from this scalar type.
    fn prop_tol() -> Self;

    /// Relative pivot threshold below which a factorization treats a matrix
    /// as singular.
    fn pivot_tol() -> Self;

    /// Lossy conversion from `f64`; the compiler stores literals as `f64`.
    fn from_literal(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

impl Scalar for f64 {
    fn prop_tol() -> f64 {
        1e-12
    }
    fn pivot_tol() -> f64 {
        1e-12
    }
}

impl Scalar for f32 {
    fn prop_tol() -> f32 {
        1e-4
    }
    fn pivot_tol() -> f32 {
        1e-6
    }
}
