//! The optimization bench: twelve compiler scenarios expressed as
//! machine-checkable predicates on emitted plans.
//!
//! Each case is a small source program plus a declarative check: which
//! kernels the plan must (or must not) contain and the exact flop count the
//! cost model should report, written as a closed form in the case's
//! dimensions.  Every case also runs the numerical equivalence check, so a
//! plan that hits the right cost with the wrong arithmetic still fails.
//!
//! The naive column reports what the same program costs with the rewrite
//! pipeline disabled (for the dispatch and blocking rows, with everything
//! but the single relevant rewrite disabled, so the comparison isolates
//! that rewrite).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::codegen::{lower_with, Kernel, Plan};
use crate::exec::{compare, eval_naive, exec_plan, generate_inputs, Environment};
use crate::frontend::parse_program;
use crate::ir::Program;
use crate::passes::{run_pipeline, PassConfig, PassId};
use crate::scalar::Scalar;

/// Seed for the per-case numerical check.
const CHECK_SEED: u64 = 1;
/// Tolerance for the per-case numerical check.
const CHECK_TOL: f64 = 1e-8;

struct Case {
    id: &'static str,
    experiment: u8,
    label: &'static str,
    source: &'static str,
    /// Configuration the reported reference cost comes from.
    baseline: fn() -> PassConfig,
    check: fn(&Ctx) -> Result<(), String>,
}

/// Everything a predicate may inspect.
struct Ctx {
    plan: Plan,
    baseline_cost: u64,
}

impl Ctx {
    fn count(&self, k: Kernel) -> usize {
        self.plan.calls.iter().filter(|c| c.kernel == k).count()
    }

    fn has(&self, k: Kernel) -> bool {
        self.count(k) > 0
    }

    fn cost(&self) -> u64 {
        self.plan.total_flops
    }

    /// Reference cost divided by plan cost.
    fn ratio(&self) -> f64 {
        self.baseline_cost as f64 / self.cost() as f64
    }

    /// Is there a `k` call accumulating into its destination (beta = 1)?
    fn accumulates(&self, k: Kernel) -> bool {
        self.plan.calls.iter().any(|c| {
            c.kernel == k
                && c.beta.as_ref().is_some_and(|b| b.lit == 1.0 && b.syms.is_empty())
        })
    }
}

fn ensure(cond: bool, what: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.to_string())
    }
}

fn expect_cost(ctx: &Ctx, want: u64) -> Result<(), String> {
    ensure(
        ctx.cost() == want,
        &format!("expected {want} flops, plan costs {}", ctx.cost()),
    )
}

fn expect_count(ctx: &Ctx, k: Kernel, want: usize) -> Result<(), String> {
    ensure(
        ctx.count(k) == want,
        &format!("expected {want} {} call(s), found {}", k.name(), ctx.count(k)),
    )
}

fn expect_none(ctx: &Ctx, k: Kernel) -> Result<(), String> {
    ensure(
        !ctx.has(k),
        &format!("plan must not call {}", k.name()),
    )
}

fn expect_ratio(ctx: &Ctx, lo: f64, hi: f64) -> Result<(), String> {
    let r = ctx.ratio();
    ensure(
        r >= lo && r <= hi,
        &format!("cost ratio {r:.4} outside [{lo}, {hi}]"),
    )
}

fn no_opt() -> PassConfig {
    PassConfig::none()
}

/// Solves stay solves, but nothing else runs: the reference point for the
/// dispatch rows is a general LU solve, not an explicit inverse.
fn lu_solve_only() -> PassConfig {
    PassConfig { enabled: vec![PassId::InvToSolve], ..PassConfig::default() }
}

/// Everything except the block-structure rewrite: the reference point for
/// the blocked row is the same pipeline treating the matrix as monolithic.
fn monolithic() -> PassConfig {
    PassConfig::without(PassId::BlockStructure)
}

#[rustfmt::skip]
fn roster() -> Vec<Case> {
    vec![
        Case {
            id: "1",
            experiment: 1,
            label: "matrix product maps to one GEMM",
            source: "matrix A(256,128)\nmatrix B(128,256)\nmatrix D(256,256)\n\
                     D := A*B\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Gemm, 1)?;
                expect_cost(c, 16_777_216) // 2mkn
            },
        },
        Case {
            id: "2",
            experiment: 2,
            label: "gram product uses SYRK at half the flops",
            source: "matrix A(256,128)\nmatrix C(256,256)\n\
                     C := A*A'\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Syrk, 1)?;
                expect_none(c, Kernel::Gemm)?;
                expect_cost(c, 8_388_608) // n^2 k
            },
        },
        Case {
            id: "3",
            experiment: 3,
            label: "paired gram sum uses SYR2K",
            source: "matrix A(256,128)\nmatrix B(256,128)\nmatrix C(256,256)\n\
                     C := A*B' + B*A'\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Syr2k, 1)?;
                expect_none(c, Kernel::Gemm)?;
                expect_none(c, Kernel::Add)?;
                expect_cost(c, 16_777_216) // 2 n^2 k
            },
        },
        Case {
            id: "4a",
            experiment: 4,
            label: "additive update folds into GEMM's beta",
            source: "matrix A(256,128)\nmatrix B(128,256)\nmatrix C(256,256)\n\
                     C := A*B + C\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Gemm, 1)?;
                expect_none(c, Kernel::Add)?;
                ensure(c.accumulates(Kernel::Gemm), "GEMM should accumulate (beta = 1)")?;
                ensure(c.plan.calls.len() == 1, "expected a single call")?;
                expect_cost(c, 16_777_216)
            },
        },
        Case {
            id: "4b",
            experiment: 4,
            label: "additive gram update folds into SYRK's beta",
            source: "matrix A(256,128)\nmatrix C(256,256)\n\
                     C := A*A' + C\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Syrk, 1)?;
                expect_none(c, Kernel::Add)?;
                ensure(c.accumulates(Kernel::Syrk), "SYRK should accumulate (beta = 1)")?;
                expect_cost(c, 8_388_608)
            },
        },
        Case {
            id: "4c",
            experiment: 4,
            label: "additive pair update folds into SYR2K's beta",
            source: "matrix A(256,128)\nmatrix B(256,128)\nmatrix C(256,256)\n\
                     C := A*B' + B*A' + C\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Syr2k, 1)?;
                expect_none(c, Kernel::Add)?;
                ensure(c.accumulates(Kernel::Syr2k), "SYR2K should accumulate (beta = 1)")?;
                expect_cost(c, 16_777_216)
            },
        },
        Case {
            id: "5",
            experiment: 5,
            label: "inverse times vector becomes a factored solve",
            source: "matrix A(256,256)\nvector b(256)\nvector x(256)\n\
                     x := inv(A)*b\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Getrf, 1)?;
                expect_count(c, Kernel::Getrs, 1)?;
                expect_none(c, Kernel::Getri)?;
                expect_cost(c, 11_315_882)?; // 2n^3/3 + 2n^2
                expect_ratio(c, 2.8, 3.1)
            },
        },
        Case {
            id: "6a",
            experiment: 6,
            label: "left-leaning chain parenthesized optimally",
            source: "matrix A1(64,512)\nmatrix A2(512,512)\nmatrix A3(512,512)\n\
                     matrix P(64,512)\n\
                     P := A1*A2*A3\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Gemm, 2)?;
                let best = crate::chain::brute_force_order(&[64, 512, 512, 512]).cost;
                ensure(c.cost() == best, "plan cost is not the chain minimum")?;
                expect_cost(c, 67_108_864)
            },
        },
        Case {
            id: "6b",
            experiment: 6,
            label: "right-leaning chain parenthesized optimally",
            source: "matrix B1(512,512)\nmatrix B2(512,512)\nmatrix B3(512,64)\n\
                     matrix P(512,64)\n\
                     P := B1*B2*B3\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Gemm, 2)?;
                let best = crate::chain::brute_force_order(&[512, 512, 512, 64]).cost;
                ensure(c.cost() == best, "plan cost is not the chain minimum")?;
                expect_cost(c, 67_108_864)
            },
        },
        Case {
            id: "6c",
            experiment: 6,
            label: "mixed chain parenthesized optimally",
            source: "matrix C1(512,512)\nmatrix C2(512,64)\nmatrix C3(64,512)\n\
                     matrix C4(512,512)\nmatrix P(512,512)\n\
                     P := C1*C2*C3*C4\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Gemm, 3)?;
                let best = crate::chain::brute_force_order(&[512, 512, 64, 512, 512]).cost;
                ensure(c.cost() == best, "plan cost is not the chain minimum")?;
                expect_cost(c, 100_663_296)
            },
        },
        Case {
            id: "7a",
            experiment: 7,
            label: "triangular product uses TRMM at half the flops",
            source: "matrix L(256,256): lower_triangular\nmatrix A(256,256)\n\
                     matrix B(256,256)\n\
                     B := L*A\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Trmm, 1)?;
                expect_none(c, Kernel::Gemm)?;
                expect_cost(c, 16_777_216) // n^2 m
            },
        },
        Case {
            id: "7b",
            experiment: 7,
            label: "diagonal product uses DIAGSCALE",
            source: "matrix D(256,256): diagonal\nmatrix A(256,256)\n\
                     matrix B(256,256)\n\
                     B := D*A\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Diagscale, 1)?;
                expect_none(c, Kernel::Gemm)?;
                expect_none(c, Kernel::Trmm)?;
                expect_cost(c, 65_536) // mn
            },
        },
        Case {
            id: "8a",
            experiment: 8,
            label: "solve against a diagonal matrix scales",
            source: "matrix M(256,256): diagonal\nvector b(256)\nvector x(256)\n\
                     x := inv(M)*b\n",
            baseline: lu_solve_only,
            check: |c| {
                expect_count(c, Kernel::Diagsolve, 1)?;
                expect_none(c, Kernel::Getrf)?;
                expect_none(c, Kernel::Getri)?;
                expect_cost(c, 256)?; // n
                ensure(c.cost() < c.baseline_cost, "not cheaper than the LU solve")
            },
        },
        Case {
            id: "8b",
            experiment: 8,
            label: "solve against a triangular matrix substitutes",
            source: "matrix M(256,256): lower_triangular\nvector b(256)\nvector x(256)\n\
                     x := inv(M)*b\n",
            baseline: lu_solve_only,
            check: |c| {
                expect_count(c, Kernel::Trsv, 1)?;
                expect_none(c, Kernel::Getrf)?;
                expect_none(c, Kernel::Getri)?;
                expect_cost(c, 65_536)?; // n^2
                ensure(c.cost() < c.baseline_cost, "not cheaper than the LU solve")
            },
        },
        Case {
            id: "8c",
            experiment: 8,
            label: "solve against an SPD matrix uses Cholesky",
            source: "matrix M(256,256): spd\nvector b(256)\nvector x(256)\n\
                     x := inv(M)*b\n",
            baseline: lu_solve_only,
            check: |c| {
                expect_count(c, Kernel::Potrf, 1)?;
                expect_count(c, Kernel::Potrs, 1)?;
                expect_none(c, Kernel::Getrf)?;
                expect_none(c, Kernel::Getri)?;
                expect_cost(c, 5_723_477)?; // n^3/3 + 2n^2
                ensure(c.cost() < c.baseline_cost, "not cheaper than the LU solve")
            },
        },
        Case {
            id: "8d",
            experiment: 8,
            label: "solve against a symmetric matrix uses LDL'",
            source: "matrix M(256,256): symmetric\nvector b(256)\nvector x(256)\n\
                     x := inv(M)*b\n",
            baseline: lu_solve_only,
            check: |c| {
                expect_count(c, Kernel::Sytrf, 1)?;
                expect_count(c, Kernel::Sytrs, 1)?;
                expect_none(c, Kernel::Getrf)?;
                expect_none(c, Kernel::Getri)?;
                expect_cost(c, 5_723_477)?; // n^3/3 + 2n^2
                ensure(c.cost() < c.baseline_cost, "not cheaper than the LU solve")
            },
        },
        Case {
            id: "9a",
            experiment: 9,
            label: "repeated product factor computed once",
            source: "matrix A(192,192)\nmatrix B(192,192)\nmatrix X(192,192)\n\
                     X := A*B*A*B\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Gemm, 2)?;
                expect_cost(c, 28_311_552) // 4n^3, against 6n^3 naive
            },
        },
        Case {
            id: "9b",
            experiment: 9,
            label: "shared inverse solves right-to-left, no product temp",
            source: "matrix A(192,192)\nmatrix B(192,192)\nvector y(192)\nvector x(192)\n\
                     x := inv(A')*B'*B*inv(A)*y\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Getrf, 1)?;
                expect_count(c, Kernel::Getrs, 2)?;
                expect_count(c, Kernel::Gemv, 2)?;
                expect_none(c, Kernel::Getri)?;
                // Materializing B*inv(A) (or B'*B) would show up as a GEMM.
                expect_none(c, Kernel::Gemm)?;
                expect_cost(c, 5_013_504) // 2n^3/3 + 4*2n^2
            },
        },
        Case {
            id: "10",
            experiment: 10,
            label: "invariant product hoisted out of the loop",
            source: "matrix A(96,96)\nmatrix B(96,96)\nmatrix M(96,96)\nvector X(96)\n\
                     for i in 1:96 { M := A*B\n X[i] := M[i,i] }\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Gemm, 1)?;
                expect_cost(c, 1_769_568) // 2n^3 + n, down from 2n^4 + n
            },
        },
        Case {
            id: "11",
            experiment: 11,
            label: "block-diagonal solve splits into per-block solves",
            source: "matrix A1(128,128)\nmatrix A2(128,128)\nvector b(256)\nvector x(256)\n\
                     x := inv([A1, 0; 0, A2])*b\n",
            baseline: monolithic,
            check: |c| {
                expect_count(c, Kernel::Getrf, 2)?;
                expect_count(c, Kernel::Getrs, 2)?;
                expect_none(c, Kernel::Getri)?;
                expect_cost(c, 2_861_738)?; // 2*(2k^3/3 + 2k^2), k = 128
                expect_ratio(c, 3.5, 4.1)
            },
        },
        Case {
            id: "12a",
            experiment: 12,
            label: "element of a sum reads two entries",
            source: "matrix A(192,192)\nmatrix B(192,192)\nscalar s\n\
                     s := (A + B)[2,2]\n",
            baseline: no_opt,
            check: |c| {
                expect_none(c, Kernel::Add)?;
                expect_none(c, Kernel::Gemm)?;
                expect_cost(c, 2)
            },
        },
        Case {
            id: "12b",
            experiment: 12,
            label: "column of a sum adds two columns",
            source: "matrix A(192,192)\nmatrix B(192,192)\nvector y(192)\n\
                     y := (A + B)[:,2]\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Axpy, 1)?;
                expect_none(c, Kernel::Add)?;
                expect_none(c, Kernel::Gemm)?;
                expect_cost(c, 384) // 2n
            },
        },
        Case {
            id: "12c",
            experiment: 12,
            label: "diagonal of a sum adds two diagonals",
            source: "matrix A(192,192)\nmatrix B(192,192)\nvector d(192)\n\
                     d := diag(A + B)\n",
            baseline: no_opt,
            check: |c| {
                expect_none(c, Kernel::Add)?;
                expect_none(c, Kernel::Gemm)?;
                expect_cost(c, 384) // 2n
            },
        },
        Case {
            id: "12d",
            experiment: 12,
            label: "element of a product is one dot",
            source: "matrix A(192,192)\nmatrix B(192,192)\nscalar s\n\
                     s := (A * B)[2,2]\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Dot, 1)?;
                expect_none(c, Kernel::Gemm)?;
                expect_cost(c, 384) // 2n
            },
        },
        Case {
            id: "12e",
            experiment: 12,
            label: "column of a product is one GEMV",
            source: "matrix A(192,192)\nmatrix B(192,192)\nvector y(192)\n\
                     y := (A * B)[:,2]\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Gemv, 1)?;
                expect_none(c, Kernel::Gemm)?;
                expect_cost(c, 73_728) // 2n^2
            },
        },
        Case {
            id: "12f",
            experiment: 12,
            label: "diagonal of a product is n dots",
            source: "matrix A(192,192)\nmatrix B(192,192)\nvector d(192)\n\
                     d := diag(A * B)\n",
            baseline: no_opt,
            check: |c| {
                expect_count(c, Kernel::Dot, 192)?;
                expect_none(c, Kernel::Gemm)?;
                expect_cost(c, 73_728) // 2n^2
            },
        },
    ]
}

/// One bench row, as it appears in the JSON report.
#[derive(Clone, Debug, Serialize)]
pub struct CaseOutcome {
    pub id: String,
    pub pass: bool,
    pub flops_optimized: u64,
    pub flops_naive: u64,
    pub kernels: Vec<String>,
    #[serde(skip)]
    pub experiment: u8,
    #[serde(skip)]
    pub label: String,
    /// Why the row failed, when it did.
    #[serde(skip)]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub cases: Vec<CaseOutcome>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.cases.iter().all(|c| c.pass)
    }

    pub fn case(&self, id: &str) -> Option<&CaseOutcome> {
        self.cases.iter().find(|c| c.id == id)
    }

    /// Ids of the rows that currently fail.
    pub fn failing(&self) -> Vec<&str> {
        self.cases.iter().filter(|c| !c.pass).map(|c| c.id.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<4}  {:<52} {:>6} {:>13} {:>13} {:>9}",
            "case", "scenario", "result", "flops", "reference", "ratio"
        );
        let _ = writeln!(out, "{}", "-".repeat(103));
        for c in &self.cases {
            let mark = if c.pass { "\u{2713}" } else { "\u{2212}" };
            let ratio = if c.flops_optimized > 0 {
                format!("{:.2}x", c.flops_naive as f64 / c.flops_optimized as f64)
            } else {
                "-".to_string()
            };
            let _ = writeln!(
                out,
                "{:<4}  {:<52} {:>6} {:>13} {:>13} {:>9}",
                c.id, c.label, mark, c.flops_optimized, c.flops_naive, ratio
            );
            if let Some(d) = &c.detail {
                let _ = writeln!(out, "      ! {d}");
            }
        }
        let failed = self.cases.iter().filter(|c| !c.pass).count();
        let _ = writeln!(out, "{}", "-".repeat(103));
        let _ = if failed == 0 {
            writeln!(out, "all {} cases pass", self.cases.len())
        } else {
            writeln!(out, "{failed} of {} cases fail", self.cases.len())
        };
        out
    }
}

/// Runs the bench with the default pipeline.
pub fn run_conformance(filter: Option<u8>) -> Report {
    run_conformance_with(filter, &PassConfig::default())
}

/// Runs the bench with an explicit pipeline configuration (the mutation
/// tests disable one pass at a time and watch which rows flip).
pub fn run_conformance_with(filter: Option<u8>, cfg: &PassConfig) -> Report {
    let cases = roster()
        .into_iter()
        .filter(|c| filter.is_none_or(|f| c.experiment == f))
        .map(|c| run_case(&c, cfg))
        .collect();
    Report { cases }
}

fn run_case(case: &Case, cfg: &PassConfig) -> CaseOutcome {
    match try_case(case, cfg) {
        Ok(outcome) => outcome,
        Err(e) => CaseOutcome {
            id: case.id.to_string(),
            pass: false,
            flops_optimized: 0,
            flops_naive: 0,
            kernels: Vec::new(),
            experiment: case.experiment,
            label: case.label.to_string(),
            detail: Some(e),
        },
    }
}

fn try_case(case: &Case, cfg: &PassConfig) -> Result<CaseOutcome, String> {
    let program = parse_program(case.source).map_err(|e| format!("parse: {e}"))?;
    let optimized = run_pipeline(&program, cfg);
    let plan =
        lower_with(&optimized, &cfg.lower_config()).map_err(|e| format!("lower: {e}"))?;

    let base_cfg = (case.baseline)();
    let base_program = run_pipeline(&program, &base_cfg);
    let base_plan = lower_with(&base_program, &base_cfg.lower_config())
        .map_err(|e| format!("lower reference: {e}"))?;

    let ctx = Ctx { plan, baseline_cost: base_plan.total_flops };
    let verdict = (case.check)(&ctx);
    let numeric = check_equivalence(&program, &optimized, &ctx.plan, CHECK_SEED, CHECK_TOL);

    let mut problems = Vec::new();
    if let Err(e) = &verdict {
        problems.push(format!("plan: {e}"));
    }
    if let Err(e) = &numeric {
        problems.push(format!("numeric: {e}"));
    }

    let mut kernels: Vec<String> = Vec::new();
    for call in &ctx.plan.calls {
        let name = call.kernel.name().to_string();
        if !kernels.contains(&name) {
            kernels.push(name);
        }
    }

    Ok(CaseOutcome {
        id: case.id.to_string(),
        pass: problems.is_empty(),
        flops_optimized: ctx.plan.total_flops,
        flops_naive: ctx.baseline_cost,
        kernels,
        experiment: case.experiment,
        label: case.label.to_string(),
        detail: if problems.is_empty() { None } else { Some(problems.join("; ")) },
    })
}

/// Runs `plan` and the naive evaluator on identically seeded inputs and
/// compares every variable the original program declares.  Returns the
/// worst relative error on success.
pub fn check_equivalence(
    original: &Program,
    optimized: &Program,
    plan: &Plan,
    seed: u64,
    tol: f64,
) -> Result<f64, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let want_inputs = generate_inputs::<f64>(original, seed).map_err(|e| err(&e))?;
    let have_inputs = generate_inputs::<f64>(optimized, seed).map_err(|e| err(&e))?;
    let want = eval_naive(original, &want_inputs).map_err(|e| err(&e))?;
    let have = exec_plan(plan, &optimized.decls, &have_inputs).map_err(|e| err(&e))?;

    // Passes introduce temporaries; only the original variables count.
    let keep: BTreeSet<&str> = original.decls.iter().map(|d| d.name.as_str()).collect();
    let cmp = compare(&filtered(&want, &keep), &filtered(&have, &keep)).map_err(|e| err(&e))?;
    if cmp.within(tol) {
        Ok(cmp.max_rel)
    } else {
        let worst = cmp.worst_var.as_deref().unwrap_or("?");
        Err(format!("max relative error {:.3e} (at `{worst}`) exceeds {tol:e}", cmp.max_rel))
    }
}

fn filtered<T: Scalar>(env: &Environment<T>, keep: &BTreeSet<&str>) -> Environment<T> {
    let mut out = Environment::new();
    for (name, m) in env.iter() {
        if keep.contains(name) {
            out.insert(name, m.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_with_the_default_pipeline() {
        let report = run_conformance(None);
        assert!(report.all_pass(), "failing rows: {:?}\n{}", report.failing(), report.table());
        assert_eq!(report.cases.len(), 26);
    }

    #[test]
    fn filtering_selects_one_experiment() {
        let report = run_conformance(Some(2));
        assert_eq!(report.cases.len(), 1);
        let row = report.case("2").expect("row 2 present");
        assert!(row.pass, "{:?}", row.detail);
        assert_eq!(row.flops_optimized, 8_388_608);
        assert_eq!(row.kernels, vec!["SYRK"]);
    }

    #[test]
    fn report_json_carries_the_agreed_fields() {
        let report = run_conformance(Some(7));
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        let cases = v["cases"].as_array().expect("cases array");
        assert_eq!(cases.len(), 2);
        for case in cases {
            let obj = case.as_object().unwrap();
            let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
            keys.sort_unstable();
            assert_eq!(keys, vec!["flops_naive", "flops_optimized", "id", "kernels", "pass"]);
        }
    }

    #[test]
    fn disabling_the_pipeline_flips_the_row_but_keeps_the_numerics() {
        let report = run_conformance_with(Some(2), &PassConfig::none());
        let row = report.case("2").expect("row 2 present");
        assert!(!row.pass);
        let detail = row.detail.as_deref().unwrap();
        assert!(detail.contains("plan:"), "predicate should fail: {detail}");
        assert!(!detail.contains("numeric:"), "numerics should still hold: {detail}");
    }

    #[test]
    fn the_plain_product_row_passes_even_unoptimized() {
        // One product of two operands needs no rewriting to hit one GEMM.
        let report = run_conformance_with(Some(1), &PassConfig::none());
        assert!(report.all_pass(), "{}", report.table());
    }

    #[test]
    fn the_table_lists_every_case(){
        let report = run_conformance(Some(12));
        let table = report.table();
        for id in ["12a", "12b", "12c", "12d", "12e", "12f"] {
            assert!(table.contains(id), "missing row {id}:\n{table}");
        }
    }
}
