//! Destination-passing lowering of checked programs to kernel plans.
//!
//! Every statement is compiled into straight-line kernel calls writing to
//! named buffers.  Values flow around as [`Val`] handles: a buffer name, an
//! optional transpose, and the part of the buffer being viewed, so a
//! transposed operand costs nothing until a kernel actually consumes it.
//! Multi-factor products are ordered by the chain planner, sums accumulate
//! into their destination through kernel `beta`/`alpha` arguments when they
//! can, and solves pick their factorization from inferred operand
//! properties.  Each strategy can be switched off individually through
//! [`LowerConfig`], which is how the optimization pipeline exposes them as
//! named passes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use thiserror::Error;

use super::plan::{
    cost, Access, ArgRef, DstRef, Kernel, KernelCall, Plan, Scale, TempDecl, Uplo,
};
use crate::chain::{self, ParenTree};
use crate::ir::{
    infer_properties, product_props, resolve_bound, shape_of, Coeff, Decls, Expr, IrError, Lhs,
    Program, PropertySet, Selector, Shape, Side, Sign, Stmt,
};

/// Strategy switches.  Everything defaults to on; the pass pipeline turns
/// individual strategies off to expose them as toggleable passes.
#[derive(Clone, Debug)]
pub struct LowerConfig {
    /// Order products of three or more factors with the chain dynamic
    /// program instead of folding left to right.
    pub chain_dp: bool,
    /// Accumulate sum terms into the destination through kernel
    /// `alpha`/`beta` arguments instead of materializing every term.
    pub fuse_updates: bool,
    /// Choose structure-exploiting kernels (TRMM/TRSV/TRSM, DIAGSCALE,
    /// DIAGSOLVE, Cholesky and LDLT factorizations) from inferred operand
    /// properties instead of always using the general ones.
    pub property_dispatch: bool,
}

impl Default for LowerConfig {
    fn default() -> LowerConfig {
        LowerConfig { chain_dp: true, fuse_updates: true, property_dispatch: true }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LowerError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("cannot lower: {0}")]
    Unsupported(String),
}

/// Lowers a checked program with the default strategy set.
pub fn lower(program: &Program) -> Result<Plan, LowerError> {
    lower_with(program, &LowerConfig::default())
}

/// Lowers a checked program with an explicit strategy set.
pub fn lower_with(program: &Program, cfg: &LowerConfig) -> Result<Plan, LowerError> {
    let mut lw = Lowerer {
        decls: &program.decls,
        cfg,
        temps: Vec::new(),
        calls: Vec::new(),
        outputs: BTreeMap::new(),
        versions: HashMap::new(),
        factors: HashMap::new(),
        owned: HashSet::new(),
        next_temp: 0,
    };
    lw.run_stmts(&program.stmts)?;
    let total_flops = lw.calls.iter().map(|c| c.flops).sum();
    Ok(Plan { temporaries: lw.temps, calls: lw.calls, outputs: lw.outputs, total_flops })
}

// ---------------------------------------------------------------------------
// Value handles
// ---------------------------------------------------------------------------

/// A lowered value: a view of a buffer plus the transpose that turns the
/// stored bytes into the logical value.  `shape` and `props` describe the
/// logical value, not the buffer.
#[derive(Clone, Debug)]
struct Val {
    name: String,
    trans: bool,
    access: Access,
    shape: Shape,
    props: PropertySet,
}

impl Val {
    fn plain(name: String, shape: Shape, props: PropertySet) -> Val {
        Val { name, trans: false, access: Access::Whole, shape, props }
    }

    fn arg(&self) -> ArgRef {
        ArgRef { name: self.name.clone(), trans: self.trans, access: self.access.clone() }
    }

    /// The transposed view of the same buffer region.
    fn flipped(&self) -> Val {
        Val {
            name: self.name.clone(),
            trans: !self.trans,
            access: self.access.clone(),
            shape: Shape::new(self.shape.cols, self.shape.rows),
            props: self.props.swap_triangles(),
        }
    }
}

/// COPY moves a whole view; EXTRACT pulls out a part.  The executor treats
/// them identically, the split just keeps plans readable.
fn move_kernel(v: &Val) -> Kernel {
    if v.access == Access::Whole {
        Kernel::Copy
    } else {
        Kernel::Extract
    }
}

fn sel_lit(s: &Selector) -> Result<usize, LowerError> {
    match s {
        Selector::Lit(v) => v
            .checked_sub(1)
            .ok_or_else(|| LowerError::Unsupported("selector index 0 in a 1-based access".into())),
        Selector::Sym(n) => Err(LowerError::Unsupported(format!(
            "selector `{n}` is not bound by an enclosing loop"
        ))),
    }
}

/// Rewrites an access given in logical coordinates into the coordinates of
/// the underlying (transposed) buffer.
fn swap_access(a: &Access) -> Access {
    match a {
        Access::Whole => Access::Whole,
        Access::Element(i, j) => Access::Element(*j, *i),
        Access::Row(i) => Access::Col(*i),
        Access::Col(j) => Access::Row(*j),
        Access::Diagonal => Access::Diagonal,
        Access::Sub { row0, col0, rows, cols } => {
            Access::Sub { row0: *col0, col0: *row0, rows: *cols, cols: *rows }
        }
    }
}

// ---------------------------------------------------------------------------
// Product kernel selection
// ---------------------------------------------------------------------------

/// Shape and structure of a (sub)product, known before anything is emitted.
#[derive(Clone, Copy)]
struct NodeMeta {
    shape: Shape,
    props: PropertySet,
}

/// Kernel used for one pairwise multiply.
#[derive(Clone, Copy, Debug, PartialEq)]
enum PairKernel {
    /// row · column -> 1x1.
    Dot,
    /// One factor is diagonal; `Side` says which.
    DiagScale(Side),
    /// One factor is triangular; `Side` says which, `Uplo` is its logical
    /// triangle.
    Trmm(Side, Uplo),
    /// matrix · column vector.
    Gemv,
    /// row vector · matrix, computed as the transposed GEMV.
    GemvRow,
    Gemm,
}

/// Whether the pairwise kernel can write the caller's destination directly.
/// `GemvRow` leaves its result transposed, and DOT/TRMM overwrite rather
/// than accumulate, so they only qualify for the first write.
fn root_fusable(choice: PairKernel, accumulate: bool) -> bool {
    match choice {
        PairKernel::GemvRow => false,
        PairKernel::Dot | PairKernel::Trmm(..) => !accumulate,
        _ => true,
    }
}

fn logical_uplo(p: PropertySet) -> Uplo {
    if p.contains(PropertySet::LOWER_TRIANGULAR) {
        Uplo::Lower
    } else {
        Uplo::Upper
    }
}

fn tree_meta(tree: &ParenTree, leaves: &[NodeMeta]) -> NodeMeta {
    match tree {
        ParenTree::Leaf(i) => leaves[*i],
        ParenTree::Node(l, r) => {
            let lm = tree_meta(l, leaves);
            let rm = tree_meta(r, leaves);
            NodeMeta {
                shape: Shape::new(lm.shape.rows, rm.shape.cols),
                props: product_props(lm.props, rm.props),
            }
        }
    }
}

fn left_tree(n: usize) -> ParenTree {
    let mut t = ParenTree::Leaf(0);
    for i in 1..n {
        t = ParenTree::Node(Box::new(t), Box::new(ParenTree::Leaf(i)));
    }
    t
}

/// Context for the final multiply of a product that writes a caller-chosen
/// destination: the buffer and whether to accumulate onto it.
struct RootCtx {
    dst: DstRef,
    /// `None` overwrites; `Some(one)` accumulates onto the previous value.
    beta: Option<Scale>,
}

// ---------------------------------------------------------------------------
// Factor caching
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum FactorKind {
    Lu,
    Chol,
    Ldlt,
}

/// Cache key for a factorization: the factored expression (transpose
/// stripped; `op(A)` reuses the factors of `A`) plus a snapshot of the
/// version of every variable it reads, so reassignment invalidates it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct FactorKey {
    expr: Expr,
    kind: FactorKind,
    versions: Vec<(String, u64)>,
}

// ---------------------------------------------------------------------------
// The lowerer
// ---------------------------------------------------------------------------

struct Lowerer<'a> {
    decls: &'a Decls,
    cfg: &'a LowerConfig,
    temps: Vec<TempDecl>,
    calls: Vec<KernelCall>,
    outputs: BTreeMap<String, String>,
    /// Write counter per program variable, for factor-cache invalidation.
    versions: HashMap<String, u64>,
    factors: HashMap<FactorKey, String>,
    /// Buffers created here, safe to mutate in place.
    owned: HashSet<String>,
    next_temp: usize,
}

impl<'a> Lowerer<'a> {
    fn temp(&mut self, shape: Shape) -> String {
        loop {
            let name = format!("T{}", self.next_temp);
            self.next_temp += 1;
            if !self.decls.contains(&name) {
                self.temps.push(TempDecl { name: name.clone(), shape });
                self.owned.insert(name.clone());
                return name;
            }
        }
    }

    fn emit(&mut self, call: KernelCall) {
        self.calls.push(call);
    }

    fn emit_move(&mut self, v: &Val, dst: DstRef) {
        let element_dst = matches!(dst.access, Access::Element(_, _));
        let mut c = KernelCall::new(move_kernel(v), dst, cost::data_move(element_dst));
        c.a = Some(v.arg());
        self.emit(c);
    }

    fn version_snapshot(&self, e: &Expr) -> Vec<(String, u64)> {
        let mut names = BTreeSet::new();
        e.referenced_operands(&mut names);
        names
            .into_iter()
            .map(|n| {
                let v = self.versions.get(&n).copied().unwrap_or(0);
                (n, v)
            })
            .collect()
    }

    /// Copies a view into a fresh plain temporary (no transpose, no access).
    fn materialize(&mut self, v: Val) -> Val {
        let t = self.temp(v.shape);
        self.emit_move(&v, DstRef::whole(&t));
        Val::plain(t, v.shape, v.props)
    }

    fn whole_view(&mut self, v: Val) -> Val {
        if v.access == Access::Whole {
            v
        } else {
            self.materialize(v)
        }
    }

    fn final_or_temp(&mut self, final_var: Option<&str>, shape: Shape) -> (DstRef, String) {
        match final_var {
            Some(v) => (DstRef::whole(v), v.to_string()),
            None => {
                let t = self.temp(shape);
                (DstRef::whole(&t), t)
            }
        }
    }

    // -- statements ---------------------------------------------------------

    fn run_stmts(&mut self, stmts: &[Stmt]) -> Result<(), LowerError> {
        for stmt in stmts {
            match stmt {
                Stmt::Assign { lhs, expr } => self.assign(lhs, expr)?,
                Stmt::For { index, lo, hi, body } => {
                    let lo = resolve_bound(lo, self.decls)?;
                    let hi = resolve_bound(hi, self.decls)?;
                    for v in lo..=hi {
                        let bound: Vec<Stmt> =
                            body.iter().map(|s| bind_stmt(s, index, v as usize)).collect();
                        self.run_stmts(&bound)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn assign(&mut self, lhs: &Lhs, expr: &Expr) -> Result<(), LowerError> {
        match lhs {
            Lhs::Var(name) => self.lower_into_var(name, expr)?,
            Lhs::Elem { name, row, col } => {
                let i = sel_lit(row)?;
                let j = match col {
                    Some(c) => sel_lit(c)?,
                    None => 0,
                };
                let v = self.lower_expr(expr)?;
                let dst = DstRef { name: name.clone(), access: Access::Element(i, j) };
                // A scalar computed by a single call into its own temporary
                // can land in the element directly; plain reads still pay
                // the one-flop store.
                let sole_writer = v.access == Access::Whole
                    && self.owned.contains(&v.name)
                    && self.calls.iter().filter(|c| c.dst.name == v.name).count() == 1
                    && self.calls.last().is_some_and(|c| c.dst.name == v.name);
                if sole_writer {
                    let temp = v.name.clone();
                    self.calls.last_mut().expect("just checked").dst = dst;
                    self.temps.retain(|t| t.name != temp);
                    self.owned.remove(&temp);
                } else {
                    self.emit_move(&v, dst);
                }
            }
        }
        let name = lhs.name().to_string();
        *self.versions.entry(name.clone()).or_insert(0) += 1;
        self.outputs.insert(name.clone(), name);
        Ok(())
    }

    fn lower_into_var(&mut self, var: &str, expr: &Expr) -> Result<(), LowerError> {
        let dst_shape = shape_of(expr, self.decls)?;
        match expr {
            Expr::Sum(ts) => {
                // One `+ var` term may serve as the update base (the old
                // value stays in place and everything else accumulates onto
                // it).  Any *other* read of `var` would see partial sums, so
                // those programs build the result in a temporary.
                let mut base_seen = false;
                let reads_var = ts.iter().any(|(s, t)| {
                    if self.cfg.fuse_updates
                        && !base_seen
                        && *s == Sign::Plus
                        && matches!(t, Expr::Operand(n) if n == var)
                    {
                        base_seen = true;
                        return false;
                    }
                    let mut names = BTreeSet::new();
                    t.referenced_operands(&mut names);
                    names.contains(var)
                });
                if reads_var {
                    let t = self.temp(dst_shape);
                    self.sum_into(&t, dst_shape, ts, None)?;
                    let v = Val::plain(t, dst_shape, PropertySet::FULL);
                    self.emit_move(&v, DstRef::whole(var));
                } else {
                    self.sum_into(var, dst_shape, ts, Some(var))?;
                }
            }
            Expr::Solve { a, b, side } => {
                let v = self.lower_solve(a, b, *side, Some(var))?;
                if v.name != var {
                    self.emit_move(&v, DstRef::whole(var));
                }
            }
            Expr::Inverse(x) => {
                self.lower_inverse(x, Some(var))?;
            }
            Expr::Syrk { .. } | Expr::Syr2k { .. } => {
                self.lower_rank_update(
                    expr,
                    None,
                    Some(RootCtx { dst: DstRef::whole(var), beta: None }),
                )?;
            }
            Expr::Block(_) => {
                // Assembled in a temporary: a direct partial write into the
                // variable would leave stale data outside the written cells.
                let v = self.lower_expr(expr)?;
                self.emit_move(&v, DstRef::whole(var));
            }
            _ => {
                let terms = vec![(Sign::Plus, expr.clone())];
                self.sum_into(var, dst_shape, &terms, Some(var))?;
            }
        }
        Ok(())
    }

    // -- sums ----------------------------------------------------------------

    fn sum_into(
        &mut self,
        dst: &str,
        dst_shape: Shape,
        terms: &[(Sign, Expr)],
        base_var: Option<&str>,
    ) -> Result<(), LowerError> {
        let mut rest: Vec<&(Sign, Expr)> = terms.iter().collect();
        let mut written = false;
        if let (Some(var), true) = (base_var, self.cfg.fuse_updates) {
            if let Some(pos) = rest
                .iter()
                .position(|(s, t)| *s == Sign::Plus && matches!(t, Expr::Operand(n) if n == var))
            {
                rest.remove(pos);
                written = true;
            }
        }
        if rest.is_empty() && !written {
            return Err(LowerError::Unsupported("sum with no terms".into()));
        }
        for (sign, term) in rest {
            self.term_into(dst, dst_shape, *sign, term, &mut written)?;
        }
        Ok(())
    }

    fn term_into(
        &mut self,
        dst: &str,
        dst_shape: Shape,
        sign: Sign,
        term: &Expr,
        written: &mut bool,
    ) -> Result<(), LowerError> {
        let (coeff, core): (Coeff, &Expr) = match term {
            Expr::ScalarMul(c, x) => (c.clone(), x.as_ref()),
            _ => (Coeff::one(), term),
        };
        let alpha = match sign {
            Sign::Plus => Scale::from_coeff(&coeff),
            Sign::Minus => Scale::from_coeff(&coeff).negated(),
        };
        match core {
            Expr::Product(fs) if self.cfg.fuse_updates => {
                let choice = self.product_root_choice(fs)?;
                if root_fusable(choice, *written) {
                    let beta = if *written { Some(Scale::one()) } else { None };
                    self.lower_product(
                        fs,
                        Some(alpha),
                        Some(RootCtx { dst: DstRef::whole(dst), beta }),
                    )?;
                    *written = true;
                    return Ok(());
                }
                let v = self.lower_product(fs, None, None)?;
                self.accumulate(dst, dst_shape, alpha, &v, written);
                Ok(())
            }
            Expr::Syrk { .. } | Expr::Syr2k { .. } if self.cfg.fuse_updates => {
                let beta = if *written { Some(Scale::one()) } else { None };
                self.lower_rank_update(
                    core,
                    Some(alpha),
                    Some(RootCtx { dst: DstRef::whole(dst), beta }),
                )?;
                *written = true;
                Ok(())
            }
            _ => {
                let v = self.lower_expr(core)?;
                self.accumulate(dst, dst_shape, alpha, &v, written);
                Ok(())
            }
        }
    }

    /// Adds `alpha * v` onto `dst`.  The first write moves the value in
    /// (COPY does not scale, so a non-unit coefficient needs a SCAL after
    /// it); later writes accumulate with ADD or, for vectors, AXPY.
    fn accumulate(&mut self, dst: &str, dst_shape: Shape, alpha: Scale, v: &Val, written: &mut bool) {
        if !*written {
            self.emit_move(v, DstRef::whole(dst));
            if !alpha.is_one() {
                let n = dst_shape.rows * dst_shape.cols;
                let mut c = KernelCall::new(Kernel::Scal, DstRef::whole(dst), cost::scal(n));
                c.alpha = Some(alpha);
                self.emit(c);
            }
            *written = true;
            return;
        }
        let is_vec = dst_shape.rows == 1 || dst_shape.cols == 1;
        let mut c = if is_vec {
            let n = dst_shape.rows * dst_shape.cols;
            KernelCall::new(Kernel::Axpy, DstRef::whole(dst), cost::axpy(n))
        } else {
            KernelCall::new(Kernel::Add, DstRef::whole(dst), cost::add(dst_shape.rows, dst_shape.cols))
        };
        c.alpha = Some(alpha);
        c.a = Some(v.arg());
        self.emit(c);
    }

    // -- expressions ---------------------------------------------------------

    fn lower_expr(&mut self, e: &Expr) -> Result<Val, LowerError> {
        let props = infer_properties(e, self.decls);
        let v = match e {
            Expr::Operand(name) => {
                let d = self.decls.get(name).ok_or_else(|| {
                    LowerError::Unsupported(format!("undeclared operand `{name}`"))
                })?;
                Val::plain(name.clone(), d.shape, d.props)
            }
            Expr::Transpose(x) => self.lower_expr(x)?.flipped(),
            Expr::Product(fs) => self.lower_product(fs, None, None)?,
            Expr::ScalarMul(c, x) => self.lower_scaled(c, x)?,
            Expr::Sum(ts) => {
                let shape = shape_of(e, self.decls)?;
                let t = self.temp(shape);
                self.sum_into(&t, shape, ts, None)?;
                Val::plain(t, shape, props)
            }
            Expr::Inverse(x) => self.lower_inverse(x, None)?,
            Expr::Solve { a, b, side } => self.lower_solve(a, b, *side, None)?,
            Expr::Syrk { .. } | Expr::Syr2k { .. } => self.lower_rank_update(e, None, None)?,
            Expr::Diag(x) => self.lower_access(x, Access::Diagonal)?,
            Expr::Element(x, r, c) => {
                self.lower_access(x, Access::Element(sel_lit(r)?, sel_lit(c)?))?
            }
            Expr::Column(x, c) => self.lower_access(x, Access::Col(sel_lit(c)?))?,
            Expr::Sub { child, row0, col0, rows, cols } => self.lower_access(
                child,
                Access::Sub { row0: *row0, col0: *col0, rows: *rows, cols: *cols },
            )?,
            Expr::Block(g) => self.lower_block(g, e)?,
            Expr::Zero(_) => {
                return Err(LowerError::Unsupported(
                    "zero block outside a block literal".into(),
                ))
            }
        };
        Ok(Val { props, ..v })
    }

    /// Accesses compose with the viewed buffer only when the base view is
    /// whole; anything else goes through a temporary first.  `logical` is
    /// the access in the coordinates of the logical (post-transpose) value.
    fn lower_access(&mut self, base: &Expr, logical: Access) -> Result<Val, LowerError> {
        let v = self.lower_expr(base)?;
        let v = self.whole_view(v);
        let shape = logical.shape_in(v.shape);
        let access = if v.trans { swap_access(&logical) } else { logical.clone() };
        // Element and diagonal accesses are orientation-free; column and
        // sub-block views inherit the buffer's transpose.
        let trans = match logical {
            Access::Element(_, _) | Access::Diagonal => false,
            _ => v.trans,
        };
        Ok(Val { name: v.name, trans, access, shape, props: PropertySet::FULL })
    }

    fn lower_scaled(&mut self, c: &Coeff, x: &Expr) -> Result<Val, LowerError> {
        let alpha = Scale::from_coeff(c);
        match x {
            Expr::Product(fs) => self.lower_product(fs, Some(alpha), None),
            Expr::Syrk { .. } | Expr::Syr2k { .. } => {
                self.lower_rank_update(x, Some(alpha), None)
            }
            _ => {
                let v = self.lower_expr(x)?;
                // Scale in place when the buffer is ours, otherwise copy out
                // first.
                let target = if v.access == Access::Whole && self.owned.contains(&v.name) {
                    v
                } else {
                    self.materialize(v)
                };
                let n = target.shape.rows * target.shape.cols;
                let mut s =
                    KernelCall::new(Kernel::Scal, DstRef::whole(&target.name), cost::scal(n));
                s.alpha = Some(alpha);
                self.emit(s);
                Ok(target)
            }
        }
    }

    // -- products ------------------------------------------------------------

    fn order_tree(&self, shapes: &[Shape]) -> ParenTree {
        let n = shapes.len();
        if n < 3 || !self.cfg.chain_dp {
            return left_tree(n);
        }
        let mut dims = Vec::with_capacity(n + 1);
        dims.push(shapes[0].rows);
        for s in shapes {
            dims.push(s.cols);
        }
        chain::optimal_order(&dims).tree
    }

    /// The kernel the final multiply of this product will use, computed
    /// without emitting anything.
    fn product_root_choice(&self, fs: &[Expr]) -> Result<PairKernel, LowerError> {
        let metas: Vec<NodeMeta> = fs
            .iter()
            .map(|f| {
                Ok(NodeMeta {
                    shape: shape_of(f, self.decls)?,
                    props: infer_properties(f, self.decls),
                })
            })
            .collect::<Result<_, LowerError>>()?;
        let shapes: Vec<Shape> = metas.iter().map(|m| m.shape).collect();
        match self.order_tree(&shapes) {
            ParenTree::Leaf(_) => {
                Err(LowerError::Unsupported("product with a single factor".into()))
            }
            ParenTree::Node(l, r) => {
                Ok(self.pair_kernel(tree_meta(&l, &metas), tree_meta(&r, &metas)))
            }
        }
    }

    fn pair_kernel(&self, l: NodeMeta, r: NodeMeta) -> PairKernel {
        let m = l.shape.rows;
        let n = r.shape.cols;
        if m == 1 && n == 1 {
            return PairKernel::Dot;
        }
        if self.cfg.property_dispatch {
            if l.props.contains(PropertySet::DIAGONAL) && l.shape.is_square() {
                return PairKernel::DiagScale(Side::Left);
            }
            if r.props.contains(PropertySet::DIAGONAL) && r.shape.is_square() {
                return PairKernel::DiagScale(Side::Right);
            }
            let l_tri = l.shape.is_square() && l.props.is_triangular();
            let r_tri = r.shape.is_square() && r.props.is_triangular();
            if l_tri || r_tri {
                let lc = cost::trmm(l.shape.rows, n);
                let rc = cost::trmm(r.shape.rows, m);
                if l_tri && (!r_tri || lc <= rc) {
                    return PairKernel::Trmm(Side::Left, logical_uplo(l.props));
                }
                return PairKernel::Trmm(Side::Right, logical_uplo(r.props));
            }
        }
        if n == 1 {
            PairKernel::Gemv
        } else if m == 1 {
            PairKernel::GemvRow
        } else {
            PairKernel::Gemm
        }
    }

    fn lower_product(
        &mut self,
        fs: &[Expr],
        alpha: Option<Scale>,
        root: Option<RootCtx>,
    ) -> Result<Val, LowerError> {
        if fs.len() < 2 {
            return Err(LowerError::Unsupported("product with a single factor".into()));
        }
        let vals: Vec<Val> = fs
            .iter()
            .map(|f| self.lower_expr(f))
            .collect::<Result<_, _>>()?;
        let shapes: Vec<Shape> = vals.iter().map(|v| v.shape).collect();
        let tree = self.order_tree(&shapes);
        self.mul_tree(&tree, &vals, alpha, root.as_ref())
    }

    fn mul_tree(
        &mut self,
        tree: &ParenTree,
        vals: &[Val],
        alpha: Option<Scale>,
        root: Option<&RootCtx>,
    ) -> Result<Val, LowerError> {
        match tree {
            ParenTree::Leaf(i) => Ok(vals[*i].clone()),
            ParenTree::Node(l, r) => {
                let lv = self.mul_tree(l, vals, None, None)?;
                let rv = self.mul_tree(r, vals, None, None)?;
                self.multiply(lv, rv, alpha, root)
            }
        }
    }

    fn multiply(
        &mut self,
        l: Val,
        r: Val,
        alpha: Option<Scale>,
        root: Option<&RootCtx>,
    ) -> Result<Val, LowerError> {
        let choice = self.pair_kernel(
            NodeMeta { shape: l.shape, props: l.props },
            NodeMeta { shape: r.shape, props: r.props },
        );
        let (m, k, n) = (l.shape.rows, l.shape.cols, r.shape.cols);
        let out_shape = Shape::new(m, n);
        let props = product_props(l.props, r.props);
        let alpha = alpha.unwrap_or_else(Scale::one);
        let beta = |root: Option<&RootCtx>| {
            root.and_then(|c| c.beta.clone()).unwrap_or_else(Scale::zero)
        };
        let dst_of = |lw: &mut Lowerer, shape: Shape| match root {
            Some(ctx) => (ctx.dst.clone(), ctx.dst.name.clone()),
            None => {
                let t = lw.temp(shape);
                (DstRef::whole(&t), t)
            }
        };
        match choice {
            PairKernel::Dot => {
                let (dst, name) = dst_of(self, out_shape);
                let mut c = KernelCall::new(Kernel::Dot, dst, cost::dot(k));
                c.alpha = Some(alpha);
                c.a = Some(l.arg());
                c.b = Some(r.arg());
                self.emit(c);
                Ok(Val::plain(name, out_shape, props))
            }
            PairKernel::DiagScale(side) => {
                let (dg, other) = match side {
                    Side::Left => (l, r),
                    Side::Right => (r, l),
                };
                let (dst, name) = dst_of(self, out_shape);
                let mut c = KernelCall::new(Kernel::Diagscale, dst, cost::diagscale(m, n));
                c.alpha = Some(alpha);
                c.a = Some(dg.arg());
                c.b = Some(other.arg());
                c.side = Some(side);
                c.beta = Some(beta(root));
                self.emit(c);
                Ok(Val::plain(name, out_shape, props))
            }
            PairKernel::Trmm(side, uplo) => {
                let (tr, other) = match side {
                    Side::Left => (l, r),
                    Side::Right => (r, l),
                };
                let flops = cost::trmm(tr.shape.rows, match side {
                    Side::Left => n,
                    Side::Right => m,
                });
                let (dst, name) = dst_of(self, out_shape);
                let mut c = KernelCall::new(Kernel::Trmm, dst, flops);
                c.alpha = Some(alpha);
                c.a = Some(tr.arg());
                c.b = Some(other.arg());
                c.side = Some(side);
                c.uplo = Some(uplo);
                self.emit(c);
                Ok(Val::plain(name, out_shape, props))
            }
            PairKernel::Gemv => {
                let (dst, name) = dst_of(self, out_shape);
                let mut c = KernelCall::new(Kernel::Gemv, dst, cost::gemv(m, k));
                c.alpha = Some(alpha);
                c.a = Some(l.arg());
                c.b = Some(r.arg());
                c.beta = Some(beta(root));
                self.emit(c);
                Ok(Val::plain(name, out_shape, props))
            }
            PairKernel::GemvRow => {
                // x'·A comes out as the column A'·x; hand back the
                // transposed view of the temporary.
                let t = self.temp(Shape::new(n, 1));
                let mut c =
                    KernelCall::new(Kernel::Gemv, DstRef::whole(&t), cost::gemv(n, k));
                c.alpha = Some(alpha);
                c.a = Some(r.flipped().arg());
                c.b = Some(l.flipped().arg());
                c.beta = Some(Scale::zero());
                self.emit(c);
                Ok(Val {
                    name: t,
                    trans: true,
                    access: Access::Whole,
                    shape: out_shape,
                    props,
                })
            }
            PairKernel::Gemm => {
                let (dst, name) = dst_of(self, out_shape);
                let mut c = KernelCall::new(Kernel::Gemm, dst, cost::gemm(m, k, n));
                c.alpha = Some(alpha);
                c.a = Some(l.arg());
                c.b = Some(r.arg());
                c.beta = Some(beta(root));
                self.emit(c);
                Ok(Val::plain(name, out_shape, props))
            }
        }
    }

    // -- rank updates ----------------------------------------------------------

    fn lower_rank_update(
        &mut self,
        e: &Expr,
        alpha: Option<Scale>,
        root: Option<RootCtx>,
    ) -> Result<Val, LowerError> {
        let (kernel, m, b, flops) = match e {
            Expr::Syrk { a, trans } => {
                let va = self.lower_expr(a)?;
                let m = if *trans { va.flipped() } else { va };
                let (n, k) = (m.shape.rows, m.shape.cols);
                (Kernel::Syrk, m, None, cost::syrk(n, k))
            }
            Expr::Syr2k { a, b, trans } => {
                let va = self.lower_expr(a)?;
                let vb = self.lower_expr(b)?;
                let (ma, mb) = if *trans {
                    (va.flipped(), vb.flipped())
                } else {
                    (va, vb)
                };
                let (n, k) = (ma.shape.rows, ma.shape.cols);
                (Kernel::Syr2k, ma, Some(mb), cost::syr2k(n, k))
            }
            _ => return Err(LowerError::Unsupported("not a rank update".into())),
        };
        let n = m.shape.rows;
        let out_shape = Shape::new(n, n);
        let (dst, name) = match &root {
            Some(ctx) => (ctx.dst.clone(), ctx.dst.name.clone()),
            None => {
                let t = self.temp(out_shape);
                (DstRef::whole(&t), t)
            }
        };
        let mut c = KernelCall::new(kernel, dst, flops);
        c.alpha = Some(alpha.unwrap_or_else(Scale::one));
        c.a = Some(m.arg());
        c.b = b.map(|v| v.arg());
        c.beta = Some(
            root.and_then(|ctx| ctx.beta).unwrap_or_else(Scale::zero),
        );
        self.emit(c);
        Ok(Val::plain(name, out_shape, PropertySet::FULL))
    }

    // -- solves and inverses ---------------------------------------------------

    fn lower_solve(
        &mut self,
        a: &Expr,
        b: &Expr,
        side: Side,
        final_var: Option<&str>,
    ) -> Result<Val, LowerError> {
        let a_shape = shape_of(a, self.decls)?;
        let n = a_shape.rows;
        let a_props = if self.cfg.property_dispatch {
            infer_properties(a, self.decls)
        } else {
            PropertySet::FULL
        };
        let vb = self.lower_expr(b)?;
        let b_shape = vb.shape;
        let nrhs = match side {
            Side::Left => b_shape.cols,
            Side::Right => b_shape.rows,
        };

        if a_props.contains(PropertySet::DIAGONAL) {
            let va = self.lower_expr(a)?;
            let va = self.whole_view(va);
            let (dst, name) = self.final_or_temp(final_var, b_shape);
            let mut c = KernelCall::new(Kernel::Diagsolve, dst, cost::diagsolve(n, nrhs));
            c.a = Some(va.arg());
            c.b = Some(vb.arg());
            c.side = Some(side);
            self.emit(c);
            return Ok(Val::plain(name, b_shape, PropertySet::FULL));
        }

        if a_props.is_triangular() {
            let va = self.lower_expr(a)?;
            let va = self.whole_view(va);
            // `uplo` names the triangle of the stored buffer; a transposed
            // view flips it relative to the logical triangle.
            let buf_props = if va.trans { va.props.swap_triangles() } else { va.props };
            let uplo = logical_uplo(buf_props);
            let (dst, name) = self.final_or_temp(final_var, b_shape);
            if side == Side::Left && b_shape.cols == 1 {
                let mut c = KernelCall::new(Kernel::Trsv, dst, cost::trsv(n));
                c.a = Some(va.arg());
                c.b = Some(vb.arg());
                c.uplo = Some(uplo);
                self.emit(c);
            } else {
                let mut c = KernelCall::new(Kernel::Trsm, dst, cost::trsm(n, nrhs));
                c.a = Some(va.arg());
                c.b = Some(vb.arg());
                c.side = Some(side);
                c.uplo = Some(uplo);
                self.emit(c);
            }
            return Ok(Val::plain(name, b_shape, PropertySet::FULL));
        }

        let kind = if a_props.contains(PropertySet::SPD) || a_props.contains(PropertySet::SPSD) {
            FactorKind::Chol
        } else if a_props.contains(PropertySet::SYMMETRIC) {
            FactorKind::Ldlt
        } else {
            FactorKind::Lu
        };
        let (slot, f_trans) = self.factor_of(a, kind, n)?;
        let (kernel, flops) = match kind {
            FactorKind::Lu => (Kernel::Getrs, cost::getrs(n, nrhs)),
            FactorKind::Chol => (Kernel::Potrs, cost::potrs(n, nrhs)),
            FactorKind::Ldlt => (Kernel::Sytrs, cost::sytrs(n, nrhs)),
        };
        match side {
            Side::Left => {
                let (dst, name) = self.final_or_temp(final_var, b_shape);
                let mut c = KernelCall::new(kernel, dst, flops);
                c.a = Some(ArgRef { name: slot, trans: f_trans, access: Access::Whole });
                c.b = Some(vb.arg());
                self.emit(c);
                Ok(Val::plain(name, b_shape, PropertySet::FULL))
            }
            Side::Right => {
                // X·op(A) = B is solved as op(A)'·X' = B'; the caller gets
                // the transposed view of the temporary.
                let t = self.temp(Shape::new(b_shape.cols, b_shape.rows));
                let a_trans = match kind {
                    FactorKind::Lu => !f_trans,
                    // Cholesky and LDLT factor symmetric matrices, where the
                    // transpose changes nothing.
                    _ => false,
                };
                let mut c = KernelCall::new(kernel, DstRef::whole(&t), flops);
                c.a = Some(ArgRef { name: slot, trans: a_trans, access: Access::Whole });
                c.b = Some(vb.flipped().arg());
                self.emit(c);
                Ok(Val {
                    name: t,
                    trans: true,
                    access: Access::Whole,
                    shape: b_shape,
                    props: PropertySet::FULL,
                })
            }
        }
    }

    fn lower_inverse(
        &mut self,
        x: &Expr,
        final_var: Option<&str>,
    ) -> Result<Val, LowerError> {
        let shape = shape_of(x, self.decls)?;
        let (slot, f_trans) = self.factor_of(x, FactorKind::Lu, shape.rows)?;
        let (dst, name) = self.final_or_temp(final_var, shape);
        let mut c = KernelCall::new(Kernel::Getri, dst, cost::getri(shape.rows));
        c.a = Some(ArgRef { name: slot, trans: f_trans, access: Access::Whole });
        self.emit(c);
        Ok(Val::plain(name, shape, PropertySet::FULL))
    }

    /// Returns the factor slot for `a` (reusing a live factorization of the
    /// same expression when one exists) and the transpose to request from
    /// the solving kernel.
    fn factor_of(
        &mut self,
        a: &Expr,
        kind: FactorKind,
        n: usize,
    ) -> Result<(String, bool), LowerError> {
        // op(A) shares the factors of A; the transpose moves into the solve.
        let (core, trans) = match a {
            Expr::Transpose(x) => (x.as_ref(), true),
            _ => (a, false),
        };
        let key =
            FactorKey { expr: core.clone(), kind, versions: self.version_snapshot(core) };
        if let Some(slot) = self.factors.get(&key) {
            return Ok((slot.clone(), trans));
        }
        let v = self.lower_expr(core)?;
        let v = if v.access == Access::Whole && !v.trans { v } else { self.materialize(v) };
        let slot = self.temp(Shape::new(n, n));
        let (kernel, flops) = match kind {
            FactorKind::Lu => (Kernel::Getrf, cost::getrf(n)),
            FactorKind::Chol => (Kernel::Potrf, cost::potrf(n)),
            FactorKind::Ldlt => (Kernel::Sytrf, cost::sytrf(n)),
        };
        let mut c = KernelCall::new(kernel, DstRef::whole(&slot), flops);
        c.a = Some(v.arg());
        self.emit(c);
        self.factors.insert(key, slot.clone());
        Ok((slot, trans))
    }

    // -- blocks ------------------------------------------------------------------

    fn lower_block(&mut self, grid: &[Vec<Expr>], e: &Expr) -> Result<Val, LowerError> {
        let shape = shape_of(e, self.decls)?;
        let t = self.temp(shape);
        let mut written = false;
        let mut row0 = 0;
        for row in grid {
            let mut col0 = 0;
            let mut row_height = 0;
            for cell in row {
                let cs = shape_of(cell, self.decls)?;
                row_height = cs.rows;
                // Zero cells stay zero: partial writes into a fresh
                // temporary land on a zeroed buffer.
                if !matches!(cell, Expr::Zero(_)) {
                    let v = self.lower_expr(cell)?;
                    self.emit_move(
                        &v,
                        DstRef {
                            name: t.clone(),
                            access: Access::Sub {
                                row0,
                                col0,
                                rows: cs.rows,
                                cols: cs.cols,
                            },
                        },
                    );
                    written = true;
                }
                col0 += cs.cols;
            }
            row0 += row_height;
        }
        if !written {
            return Err(LowerError::Unsupported(
                "block literal with every cell zero".into(),
            ));
        }
        Ok(Val::plain(t, shape, PropertySet::FULL))
    }
}

// ---------------------------------------------------------------------------
// Loop unrolling
// ---------------------------------------------------------------------------

fn bind_sel(s: &Selector, index: &str, value: usize) -> Selector {
    match s {
        Selector::Sym(n) if n == index => Selector::Lit(value),
        _ => s.clone(),
    }
}

fn bind_lhs(lhs: &Lhs, index: &str, value: usize) -> Lhs {
    match lhs {
        Lhs::Var(_) => lhs.clone(),
        Lhs::Elem { name, row, col } => Lhs::Elem {
            name: name.clone(),
            row: bind_sel(row, index, value),
            col: col.as_ref().map(|c| bind_sel(c, index, value)),
        },
    }
}

fn bind_stmt(s: &Stmt, index: &str, value: usize) -> Stmt {
    match s {
        Stmt::Assign { lhs, expr } => Stmt::Assign {
            lhs: bind_lhs(lhs, index, value),
            expr: expr.bind_index(index, value),
        },
        Stmt::For { index: inner, lo, hi, body } => {
            // An inner loop reusing the name shadows the outer index.
            if inner == index {
                s.clone()
            } else {
                Stmt::For {
                    index: inner.clone(),
                    lo: lo.clone(),
                    hi: hi.clone(),
                    body: body.iter().map(|b| bind_stmt(b, index, value)).collect(),
                }
            }
        }
    }
}
