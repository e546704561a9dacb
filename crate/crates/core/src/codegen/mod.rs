//! Lowering from checked programs to kernel plans.
//!
//! [`plan`] defines the plan data model, the integer cost model, the text
//! and JSON serializations, and structural validation.  [`lower`] walks a
//! canonicalized program and emits kernel calls, choosing kernels by operand
//! properties and shapes and ordering multi-factor products with the
//! chain-multiplication planner.

pub mod lower;
pub mod plan;

pub use lower::{lower, lower_with, LowerConfig, LowerError};
pub use plan::{
    cost, emit_json, emit_text, parse_json, parse_text, plan_cost, validate_plan, Access, ArgRef,
    DstRef, Kernel, KernelCall, Plan, PlanError, PlanParseError, Scale, TempDecl, Uplo,
    ALL_KERNELS,
};
