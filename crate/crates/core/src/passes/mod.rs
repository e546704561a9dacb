//! Semantics-preserving rewrite passes over checked [`Program`]s.
//!
//! Each pass is a pure `Program → Program` function. The pipeline applies the
//! enabled passes in order, canonicalizing after each and re-running a pass
//! until it reaches a fixed point (every pass is idempotent, so this settles
//! immediately in practice). Rewrites that are not unconditional improvements
//! are guarded: a candidate program is kept only when the lowered kernel plan
//! gets strictly cheaper, with [`plan_cost`] as the single arbiter.
//!
//! Three additional identifiers do not rewrite the program at all; they are
//! lowering toggles carried in the same list so one `--passes` flag controls
//! the whole compiler: `chain_order` (product-chain dynamic programming),
//! `fuse_updates` (accumulate into the destination with β=1), and
//! `property_dispatch` (property-based kernel selection).

mod access;
mod block;
mod cse;
mod licm;
mod rank;
mod solve_rewrite;

pub use access::pushdown_partial_access;
pub use block::exploit_block_structure;
pub use cse::eliminate_common_subexpressions;
pub use licm::hoist_loop_invariants;
pub use rank::detect_rank_updates;
pub use solve_rewrite::rewrite_inv_to_solve;

use crate::codegen::{lower, lower_with, plan_cost, LowerConfig, LowerError, Plan};
use crate::ir::{canonicalize, canonicalize_program, Expr, Program, Sign, Stmt};

/// One entry of the pass list. The first six rewrite the program; the last
/// three switch lowering behavior on or off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PassId {
    InvToSolve,
    BlockStructure,
    PartialAccess,
    RankUpdates,
    Licm,
    Cse,
    ChainOrder,
    FuseUpdates,
    PropertyDispatch,
}

impl PassId {
    /// Default application order. Inverses must become solves before block
    /// splitting (which targets `Solve` nodes) and before chains are costed;
    /// access pushdown runs before rank-update detection so partial reads
    /// never materialize a product only to feed a rank-update kernel; CSE
    /// runs last so it sees the final shape of every statement.
    pub const DEFAULT_ORDER: [PassId; 9] = [
        PassId::InvToSolve,
        PassId::BlockStructure,
        PassId::PartialAccess,
        PassId::RankUpdates,
        PassId::Licm,
        PassId::Cse,
        PassId::ChainOrder,
        PassId::FuseUpdates,
        PassId::PropertyDispatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PassId::InvToSolve => "inv_to_solve",
            PassId::BlockStructure => "block_structure",
            PassId::PartialAccess => "partial_access",
            PassId::RankUpdates => "rank_updates",
            PassId::Licm => "licm",
            PassId::Cse => "cse",
            PassId::ChainOrder => "chain_order",
            PassId::FuseUpdates => "fuse_updates",
            PassId::PropertyDispatch => "property_dispatch",
        }
    }

    pub fn from_name(name: &str) -> Option<PassId> {
        PassId::DEFAULT_ORDER.iter().copied().find(|id| id.name() == name)
    }
}

/// How the CSE pass picks shared partial sums: the exact branch-and-bound
/// solver (up to `max_exact_cse_terms` distinct terms, then falling back), or
/// always the greedy heuristic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CseMode {
    Exact,
    Greedy,
}

/// Pipeline configuration: which passes run, in what order, and how the CSE
/// pass selects shared sums.
#[derive(Clone, Debug, PartialEq)]
pub struct PassConfig {
    pub enabled: Vec<PassId>,
    pub cse_mode: CseMode,
    pub max_exact_cse_terms: usize,
}

impl Default for PassConfig {
    fn default() -> PassConfig {
        PassConfig {
            enabled: PassId::DEFAULT_ORDER.to_vec(),
            cse_mode: CseMode::Exact,
            max_exact_cse_terms: 12,
        }
    }
}

impl PassConfig {
    /// The `--no-opt` configuration: no rewrites, no lowering optimizations.
    pub fn none() -> PassConfig {
        PassConfig { enabled: Vec::new(), ..PassConfig::default() }
    }

    /// Parses a comma-separated identifier list; unknown names are rejected.
    /// An empty string yields the empty list.
    pub fn parse_list(list: &str) -> Result<PassConfig, String> {
        let mut enabled = Vec::new();
        for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let id = PassId::from_name(part)
                .ok_or_else(|| format!("unknown pass identifier `{part}`"))?;
            if !enabled.contains(&id) {
                enabled.push(id);
            }
        }
        Ok(PassConfig { enabled, ..PassConfig::default() })
    }

    /// The default configuration minus one pass (mutation testing hook).
    pub fn without(id: PassId) -> PassConfig {
        let mut cfg = PassConfig::default();
        cfg.enabled.retain(|p| *p != id);
        cfg
    }

    pub fn is_enabled(&self, id: PassId) -> bool {
        self.enabled.contains(&id)
    }

    /// Lowering switches derived from the presence of the toggle
    /// pseudo-passes.
    pub fn lower_config(&self) -> LowerConfig {
        LowerConfig {
            chain_dp: self.is_enabled(PassId::ChainOrder),
            fuse_updates: self.is_enabled(PassId::FuseUpdates),
            property_dispatch: self.is_enabled(PassId::PropertyDispatch),
        }
    }
}

/// Applies the enabled passes in configured order, each to a fixed point.
pub fn run_pipeline(program: &Program, cfg: &PassConfig) -> Program {
    let mut cur = canonicalize_program(program.clone());
    for id in &cfg.enabled {
        // Idempotence makes one extra sweep enough; the cap is insurance.
        for _ in 0..8 {
            let next = canonicalize_program(apply(*id, &cur, cfg));
            if next == cur {
                break;
            }
            cur = next;
        }
    }
    cur
}

fn apply(id: PassId, p: &Program, cfg: &PassConfig) -> Program {
    match id {
        PassId::InvToSolve => rewrite_inv_to_solve(p),
        PassId::BlockStructure => exploit_block_structure(p),
        PassId::PartialAccess => pushdown_partial_access(p),
        PassId::RankUpdates => detect_rank_updates(p),
        PassId::Licm => hoist_loop_invariants(p),
        PassId::Cse => eliminate_common_subexpressions(
            p,
            cfg.cse_mode,
            cfg.max_exact_cse_terms,
        ),
        // Lowering toggles leave the program untouched.
        PassId::ChainOrder | PassId::FuseUpdates | PassId::PropertyDispatch => p.clone(),
    }
}

/// Full compile: pipeline then lowering, both driven by one configuration.
pub fn compile_with(program: &Program, cfg: &PassConfig) -> Result<Plan, LowerError> {
    lower_with(&run_pipeline(program, cfg), &cfg.lower_config())
}

/// Compiles with the default configuration.
pub fn compile(program: &Program) -> Result<Plan, LowerError> {
    compile_with(program, &PassConfig::default())
}

/// Plan cost of a program under default lowering, when it lowers at all.
pub(crate) fn cost_of(p: &Program) -> Option<u64> {
    lower(p).ok().map(|plan| plan_cost(&plan))
}

/// Keeps `candidate` only when it lowers strictly cheaper than `current`.
pub(crate) fn keep_if_cheaper(current: Program, candidate: Program) -> Program {
    match (cost_of(&current), cost_of(&candidate)) {
        (Some(a), Some(b)) if b < a => candidate,
        _ => current,
    }
}

/// The canonical transpose of a canonical expression.
pub(crate) fn transposed(e: &Expr) -> Expr {
    canonicalize(Expr::Transpose(Box::new(e.clone())))
}

/// Rebuilds an expression bottom-up, applying `f` to every node after its
/// children have been rebuilt.
pub(crate) fn map_expr(e: Expr, f: &mut impl FnMut(Expr) -> Expr) -> Expr {
    let rebuilt = match e {
        Expr::Operand(_) | Expr::Zero(_) => e,
        Expr::Product(fs) => Expr::Product(fs.into_iter().map(|x| map_expr(x, f)).collect()),
        Expr::Sum(ts) => {
            Expr::Sum(ts.into_iter().map(|(s, t)| (s, map_expr(t, f))).collect())
        }
        Expr::Transpose(x) => Expr::Transpose(Box::new(map_expr(*x, f))),
        Expr::Inverse(x) => Expr::Inverse(Box::new(map_expr(*x, f))),
        Expr::ScalarMul(c, x) => Expr::ScalarMul(c, Box::new(map_expr(*x, f))),
        Expr::Block(g) => Expr::Block(
            g.into_iter()
                .map(|row| row.into_iter().map(|x| map_expr(x, f)).collect())
                .collect(),
        ),
        Expr::Diag(x) => Expr::Diag(Box::new(map_expr(*x, f))),
        Expr::Element(x, r, c) => Expr::Element(Box::new(map_expr(*x, f)), r, c),
        Expr::Column(x, c) => Expr::Column(Box::new(map_expr(*x, f)), c),
        Expr::Solve { a, b, side } => Expr::Solve {
            a: Box::new(map_expr(*a, f)),
            b: Box::new(map_expr(*b, f)),
            side,
        },
        Expr::Syrk { a, trans } => Expr::Syrk { a: Box::new(map_expr(*a, f)), trans },
        Expr::Syr2k { a, b, trans } => Expr::Syr2k {
            a: Box::new(map_expr(*a, f)),
            b: Box::new(map_expr(*b, f)),
            trans,
        },
        Expr::Sub { child, row0, col0, rows, cols } => Expr::Sub {
            child: Box::new(map_expr(*child, f)),
            row0,
            col0,
            rows,
            cols,
        },
    };
    f(rebuilt)
}

/// Applies `f` to every assignment right-hand side, loop bodies included.
pub(crate) fn map_rhs(program: &Program, f: &mut impl FnMut(Expr) -> Expr) -> Program {
    fn walk(stmts: Vec<Stmt>, f: &mut impl FnMut(Expr) -> Expr) -> Vec<Stmt> {
        stmts
            .into_iter()
            .map(|s| match s {
                Stmt::Assign { lhs, expr } => Stmt::Assign { lhs, expr: f(expr) },
                Stmt::For { index, lo, hi, body } => {
                    Stmt::For { index, lo, hi, body: walk(body, f) }
                }
            })
            .collect()
    }
    let mut out = program.clone();
    out.stmts = walk(std::mem::take(&mut out.stmts), f);
    out
}

/// True for nodes whose evaluation performs arithmetic, as opposed to pure
/// data movement (operands, transposed views, accesses, block assembly).
pub(crate) fn bears_compute(e: &Expr) -> bool {
    match e {
        Expr::Product(_)
        | Expr::Sum(_)
        | Expr::Inverse(_)
        | Expr::ScalarMul(_, _)
        | Expr::Solve { .. }
        | Expr::Syrk { .. }
        | Expr::Syr2k { .. } => true,
        Expr::Operand(_)
        | Expr::Zero(_)
        | Expr::Transpose(_)
        | Expr::Block(_)
        | Expr::Diag(_)
        | Expr::Element(_, _, _)
        | Expr::Column(_, _)
        | Expr::Sub { .. } => false,
    }
}

/// Splits a canonical term into its scalar coefficient and core expression.
pub(crate) fn split_coeff(e: &Expr) -> (Option<crate::ir::Coeff>, &Expr) {
    match e {
        Expr::ScalarMul(c, x) => (Some(c.clone()), x),
        _ => (None, e),
    }
}

/// Re-wraps a coefficient produced by [`split_coeff`].
pub(crate) fn wrap_coeff(c: Option<crate::ir::Coeff>, e: Expr) -> Expr {
    match c {
        Some(c) => Expr::ScalarMul(c, Box::new(e)),
        None => e,
    }
}

/// The terms of an expression viewed as a sum.
pub(crate) fn sum_terms(e: &Expr) -> Vec<(Sign, Expr)> {
    match e {
        Expr::Sum(ts) => ts.clone(),
        other => vec![(Sign::Plus, other.clone())],
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::Kernel;
    use crate::frontend::parse_program;

    fn program(src: &str) -> Program {
        parse_program(src).expect("test program parses")
    }

    #[test]
    fn pass_names_round_trip() {
        for id in PassId::DEFAULT_ORDER {
            assert_eq!(PassId::from_name(id.name()), Some(id));
        }
        assert_eq!(PassId::from_name("constant_folding"), None);
    }

    #[test]
    fn unknown_pass_identifiers_are_rejected() {
        let err = PassConfig::parse_list("cse,frobnicate").unwrap_err();
        assert!(err.contains("frobnicate"), "{err}");
        let cfg = PassConfig::parse_list("licm, cse").expect("valid list");
        assert_eq!(cfg.enabled, vec![PassId::Licm, PassId::Cse]);
        assert!(PassConfig::parse_list("").expect("empty list").enabled.is_empty());
    }

    #[test]
    fn toggle_passes_drive_the_lowering_config() {
        let all = PassConfig::default().lower_config();
        assert!(all.chain_dp && all.fuse_updates && all.property_dispatch);
        let cfg = PassConfig::without(PassId::ChainOrder).lower_config();
        assert!(!cfg.chain_dp && cfg.fuse_updates);
        let none = PassConfig::none().lower_config();
        assert!(!none.chain_dp && !none.fuse_updates && !none.property_dispatch);
    }

    #[test]
    fn empty_pass_list_leaves_the_program_alone() {
        let p = program("matrix A(4,4)\nvector b(4)\nvector x(4)\nx := inv(A)*b\n");
        let out = run_pipeline(&p, &PassConfig::none());
        assert_eq!(out, canonicalize_program(p));
    }

    #[test]
    fn default_pipeline_turns_inverses_into_solves() {
        let p = program("matrix A(4,4)\nvector b(4)\nvector x(4)\nx := inv(A)*b\n");
        let plan = compile(&p).expect("compiles");
        let kernels: Vec<Kernel> = plan.calls.iter().map(|c| c.kernel).collect();
        assert_eq!(kernels, vec![Kernel::Getrf, Kernel::Getrs]);
    }

    #[test]
    fn pipeline_output_is_a_fixed_point() {
        let src = "matrix A(6,6)\nmatrix B(6,6)\nmatrix X(6,6)\nvector y(6)\n\
                   vector x(6)\nX := A*B*A*B\nx := inv(A)*y\n";
        let p = program(src);
        let cfg = PassConfig::default();
        let once = run_pipeline(&p, &cfg);
        let twice = run_pipeline(&once, &cfg);
        assert_eq!(once, twice);
    }

    #[test]
    fn normal_equations_dispatch_to_a_cholesky_solve() {
        let src = "matrix X(8,3)\nvector y(8)\nvector b(3)\nb := inv(X'*X)*X'*y\n";
        let plan = compile(&program(src)).expect("compiles");
        let kernels: Vec<Kernel> = plan.calls.iter().map(|c| c.kernel).collect();
        assert!(
            kernels.contains(&Kernel::Potrf) && kernels.contains(&Kernel::Potrs),
            "expected a Cholesky solve of the Gram system, got {kernels:?}"
        );
        assert!(!kernels.contains(&Kernel::Getri));
    }
}
