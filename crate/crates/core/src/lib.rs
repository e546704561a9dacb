//! Compiler core for the `lamp` matrix DSL.
//!
//! The pipeline turns a small declarative language for dense linear algebra
//! (`.lamp` files) into a sequence of abstract BLAS/LAPACK-style kernel calls
//! chosen to minimize a floating-point operation count:
//!
//! 1. [`frontend`] lexes and parses source text into the [`ir`] expression
//!    tree, checks shapes, and canonicalizes.
//! 2. [`passes`] applies semantics-preserving rewrites: inverse-to-solve,
//!    block-structure exploitation, partial-access pushdown, rank-update
//!    detection, loop-invariant hoisting, and common-subexpression
//!    elimination.
//! 3. [`codegen`] lowers the rewritten program to a [`codegen::Plan`],
//!    ordering product chains with the dynamic program in [`chain`] and
//!    dispatching on inferred operand properties.
//! 4. [`exec`] provides a naive reference evaluator and a plan executor so
//!    optimized plans can be verified numerically against the original
//!    program.
//!
//! [`ocse`] contains the combinatorial core used by the CSE pass on sum
//! chains, together with an exact solver, a greedy heuristic, and a reduction
//! from ensemble computation instances.
//!
//! The executor is generic over the scalar type via [`scalar::Scalar`]
//! (`f32`/`f64`); the aliases below fix the default 64-bit instantiation.

pub mod chain;
pub mod codegen;
pub mod conformance;
pub mod corpus;
pub mod exec;
pub mod frontend;
pub mod ir;
pub mod ocse;
pub mod passes;
pub mod scalar;

pub use exec::{DenseMatrix, Environment};

/// Dense matrix over 32-bit floats (the default instantiation is `f64`).
pub type DenseMatrixF32 = exec::DenseMatrix<f32>;
/// Variable binding environment over 32-bit floats.
pub type EnvironmentF32 = exec::Environment<f32>;
