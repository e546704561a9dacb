//! Expression IR for the matrix DSL.
//!
//! A [`Program`] is a list of operand declarations plus assignments and
//! counted loops. Expressions are trees of [`Expr`] nodes; after
//! [`canonicalize`] they satisfy the canonical form the rest of the compiler
//! relies on:
//!
//! * transposes are pushed to the leaves (`(AB)ᵀ → BᵀAᵀ`, `(A+B)ᵀ → Aᵀ+Bᵀ`,
//!   `(Aᵀ)ᵀ → A`, `(A⁻¹)ᵀ → (Aᵀ)⁻¹`),
//! * products and sums are flattened n-ary (a `Product` has at least two
//!   factors),
//! * scalar literals are folded and hoisted into a single leading
//!   [`Expr::ScalarMul`].
//!
//! The `Solve`, `Syrk`, `Syr2k` and `Sub` variants never come out of the
//! parser; they are introduced by rewrite passes and consumed by lowering.

mod canon;
mod check;
mod infer;

pub use canon::{canonicalize, canonicalize_program};
pub use check::{check_program, resolve_bound, shape_of};
pub use infer::infer_properties;
pub(crate) use infer::product_props;

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

/// Row/column extent of a matrix expression. Vectors are `n×1`, scalars `1×1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Shape {
        Shape { rows, cols }
    }

    pub fn transposed(self) -> Shape {
        Shape { rows: self.cols, cols: self.rows }
    }

    pub fn is_square(self) -> bool {
        self.rows == self.cols
    }

    pub fn is_vector(self) -> bool {
        self.cols == 1
    }

    pub fn is_scalar(self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn len(self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Structural property flags attached to operands and inferred for
/// expressions. The empty set means "full": no known structure.
///
/// Construction applies the closure rules `SPD ⇒ SYMMETRIC ∧ SPSD`,
/// `IDENTITY ⇒ DIAGONAL ∧ SPD`, and `DIAGONAL ⇒ LOWER ∧ UPPER TRIANGULAR`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PropertySet(u16);

impl PropertySet {
    pub const FULL: PropertySet = PropertySet(0);
    pub const SYMMETRIC: PropertySet = PropertySet(1 << 0);
    pub const SPD: PropertySet = PropertySet(1 << 1);
    pub const SPSD: PropertySet = PropertySet(1 << 2);
    pub const LOWER_TRIANGULAR: PropertySet = PropertySet(1 << 3);
    pub const UPPER_TRIANGULAR: PropertySet = PropertySet(1 << 4);
    pub const DIAGONAL: PropertySet = PropertySet(1 << 5);
    pub const IDENTITY: PropertySet = PropertySet(1 << 6);
    pub const ZERO: PropertySet = PropertySet(1 << 7);
    pub const BLOCK_DIAGONAL: PropertySet = PropertySet(1 << 8);

    /// Builds a set from raw flags and applies implication closure.
    pub fn new(flags: PropertySet) -> PropertySet {
        let mut bits = flags.0;
        loop {
            let mut next = bits;
            if next & Self::IDENTITY.0 != 0 {
                next |= Self::DIAGONAL.0 | Self::SPD.0;
            }
            if next & Self::SPD.0 != 0 {
                next |= Self::SYMMETRIC.0 | Self::SPSD.0;
            }
            if next & Self::DIAGONAL.0 != 0 {
                next |= Self::LOWER_TRIANGULAR.0 | Self::UPPER_TRIANGULAR.0;
            }
            if next == bits {
                return PropertySet(bits);
            }
            bits = next;
        }
    }

    pub fn contains(self, other: PropertySet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn union(self, other: PropertySet) -> PropertySet {
        PropertySet::new(PropertySet(self.0 | other.0))
    }

    /// Intersection of two closed sets (closed sets are closed under
    /// intersection, so no re-closure is needed).
    pub fn intersect(self, other: PropertySet) -> PropertySet {
        PropertySet(self.0 & other.0)
    }

    pub fn without(self, other: PropertySet) -> PropertySet {
        PropertySet(self.0 & !other.0)
    }

    pub fn is_full(self) -> bool {
        self.0 == 0
    }

    pub fn is_triangular(self) -> bool {
        self.contains(Self::LOWER_TRIANGULAR) || self.contains(Self::UPPER_TRIANGULAR)
    }

    /// Swaps the lower/upper triangular flags, preserving everything else.
    pub fn swap_triangles(self) -> PropertySet {
        let mut bits = self.0 & !(Self::LOWER_TRIANGULAR.0 | Self::UPPER_TRIANGULAR.0);
        if self.contains(Self::LOWER_TRIANGULAR) {
            bits |= Self::UPPER_TRIANGULAR.0;
        }
        if self.contains(Self::UPPER_TRIANGULAR) {
            bits |= Self::LOWER_TRIANGULAR.0;
        }
        PropertySet(bits)
    }

    /// Flag names in declaration order, or `full` for the empty set.
    pub fn names(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (flag, name) in Self::ALL {
            if self.contains(flag) {
                out.push(name);
            }
        }
        out
    }

    pub const ALL: [(PropertySet, &'static str); 9] = [
        (Self::SYMMETRIC, "symmetric"),
        (Self::SPD, "spd"),
        (Self::SPSD, "spsd"),
        (Self::LOWER_TRIANGULAR, "lower_triangular"),
        (Self::UPPER_TRIANGULAR, "upper_triangular"),
        (Self::DIAGONAL, "diagonal"),
        (Self::IDENTITY, "identity"),
        (Self::ZERO, "zero"),
        (Self::BLOCK_DIAGONAL, "block_diagonal"),
    ];

    pub fn from_name(name: &str) -> Option<PropertySet> {
        Self::ALL
            .iter()
            .find(|(_, n)| *n == name)
            .map(|(f, _)| PropertySet::new(*f))
    }
}

impl fmt::Debug for PropertySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self)
    }
}

impl fmt::Display for PropertySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_full() {
            return write!(f, "full");
        }
        write!(f, "{}", self.names().join(","))
    }
}

/// Sign of a term in a flattened sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Row or column selector in an element/column access. Literals are 1-based;
/// symbols refer to an enclosing loop index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Selector {
    Lit(usize),
    Sym(String),
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Lit(v) => write!(f, "{}", v),
            Selector::Sym(s) => write!(f, "{}", s),
        }
    }
}

/// Scalar coefficient on a subexpression: a folded literal times a product of
/// declared scalar symbols (kept sorted for canonical comparison).
#[derive(Clone, Debug)]
pub struct Coeff {
    pub lit: f64,
    pub syms: Vec<String>,
}

impl Coeff {
    pub fn one() -> Coeff {
        Coeff { lit: 1.0, syms: Vec::new() }
    }

    pub fn lit(v: f64) -> Coeff {
        Coeff { lit: v, syms: Vec::new() }
    }

    pub fn sym(name: &str) -> Coeff {
        Coeff { lit: 1.0, syms: vec![name.to_string()] }
    }

    pub fn is_one(&self) -> bool {
        self.lit == 1.0 && self.syms.is_empty()
    }

    pub fn mul(&self, other: &Coeff) -> Coeff {
        let mut syms = self.syms.clone();
        syms.extend(other.syms.iter().cloned());
        syms.sort();
        Coeff { lit: self.lit * other.lit, syms }
    }

    /// Compile-time value when every symbol is a declared scalar with a
    /// literal initializer.
    pub fn known_value(&self, decls: &Decls) -> Option<f64> {
        let mut v = self.lit;
        for s in &self.syms {
            v *= decls.get(s)?.value?;
        }
        Some(v)
    }
}

impl PartialEq for Coeff {
    fn eq(&self, other: &Coeff) -> bool {
        self.lit.to_bits() == other.lit.to_bits() && self.syms == other.syms
    }
}

impl Eq for Coeff {}

impl Hash for Coeff {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.lit.to_bits().hash(state);
        self.syms.hash(state);
    }
}

impl PartialOrd for Coeff {
    fn partial_cmp(&self, other: &Coeff) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Coeff {
    fn cmp(&self, other: &Coeff) -> std::cmp::Ordering {
        (self.lit.to_bits(), &self.syms).cmp(&(other.lit.to_bits(), &other.syms))
    }
}

/// Which side of the right-hand side a solve's coefficient matrix sits on:
/// `Left` computes `a⁻¹·b`, `Right` computes `b·a⁻¹`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
}

/// Expression tree node.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    /// Reference to a declared operand (or assigned program variable).
    Operand(String),
    /// Context-shaped zero block; the shape is resolved during checking.
    Zero(Option<Shape>),
    /// n-ary product; at least two factors after canonicalization.
    Product(Vec<Expr>),
    /// n-ary sum of signed terms.
    Sum(Vec<(Sign, Expr)>),
    Transpose(Box<Expr>),
    Inverse(Box<Expr>),
    /// Scalar coefficient times a subexpression.
    ScalarMul(Coeff, Box<Expr>),
    /// Block matrix literal: a grid of conforming sub-expressions.
    Block(Vec<Vec<Expr>>),
    /// Main-diagonal extraction as a column vector.
    Diag(Box<Expr>),
    /// Single element access `e[i,j]` (1-based selectors).
    Element(Box<Expr>, Selector, Selector),
    /// Column access `e[:,j]`.
    Column(Box<Expr>, Selector),
    /// Linear solve introduced by the inverse-rewrite pass.
    Solve { a: Box<Expr>, b: Box<Expr>, side: Side },
    /// Symmetric rank-k update `a·aᵀ` (`trans` selects `aᵀ·a`).
    Syrk { a: Box<Expr>, trans: bool },
    /// Symmetric rank-2k update `a·bᵀ + b·aᵀ` (`trans`: `aᵀ·b + bᵀ·a`).
    Syr2k { a: Box<Expr>, b: Box<Expr>, trans: bool },
    /// Contiguous submatrix view introduced by the block pass (0-based
    /// offsets).
    Sub { child: Box<Expr>, row0: usize, col0: usize, rows: usize, cols: usize },
}

impl Expr {
    pub fn operand(name: &str) -> Expr {
        Expr::Operand(name.to_string())
    }

    pub fn transpose(self) -> Expr {
        Expr::Transpose(Box::new(self))
    }

    pub fn inverse(self) -> Expr {
        Expr::Inverse(Box::new(self))
    }

    /// Collects the names of all operands referenced anywhere in the tree
    /// (including scalar coefficient symbols).
    pub fn referenced_operands(&self, out: &mut std::collections::BTreeSet<String>) {
        match self {
            Expr::Operand(n) => {
                out.insert(n.clone());
            }
            Expr::Zero(_) => {}
            Expr::Product(fs) => fs.iter().for_each(|f| f.referenced_operands(out)),
            Expr::Sum(ts) => ts.iter().for_each(|(_, t)| t.referenced_operands(out)),
            Expr::Transpose(x) | Expr::Inverse(x) | Expr::Diag(x) => x.referenced_operands(out),
            Expr::ScalarMul(c, x) => {
                out.extend(c.syms.iter().cloned());
                x.referenced_operands(out);
            }
            Expr::Block(g) => g.iter().flatten().for_each(|b| b.referenced_operands(out)),
            Expr::Element(x, _, _) | Expr::Column(x, _) => x.referenced_operands(out),
            Expr::Solve { a, b, .. } => {
                a.referenced_operands(out);
                b.referenced_operands(out);
            }
            Expr::Syrk { a, .. } => a.referenced_operands(out),
            Expr::Syr2k { a, b, .. } => {
                a.referenced_operands(out);
                b.referenced_operands(out);
            }
            Expr::Sub { child, .. } => child.referenced_operands(out),
        }
    }

    /// Collects loop-index symbols used in selectors.
    pub fn selector_symbols(&self, out: &mut std::collections::BTreeSet<String>) {
        let sel = |s: &Selector, out: &mut std::collections::BTreeSet<String>| {
            if let Selector::Sym(n) = s {
                out.insert(n.clone());
            }
        };
        match self {
            Expr::Operand(_) | Expr::Zero(_) => {}
            Expr::Product(fs) => fs.iter().for_each(|f| f.selector_symbols(out)),
            Expr::Sum(ts) => ts.iter().for_each(|(_, t)| t.selector_symbols(out)),
            Expr::Transpose(x) | Expr::Inverse(x) | Expr::Diag(x) | Expr::ScalarMul(_, x) => {
                x.selector_symbols(out)
            }
            Expr::Block(g) => g.iter().flatten().for_each(|b| b.selector_symbols(out)),
            Expr::Element(x, r, c) => {
                x.selector_symbols(out);
                sel(r, out);
                sel(c, out);
            }
            Expr::Column(x, c) => {
                x.selector_symbols(out);
                sel(c, out);
            }
            Expr::Solve { a, b, .. } => {
                a.selector_symbols(out);
                b.selector_symbols(out);
            }
            Expr::Syrk { a, .. } => a.selector_symbols(out),
            Expr::Syr2k { a, b, .. } => {
                a.selector_symbols(out);
                b.selector_symbols(out);
            }
            Expr::Sub { child, .. } => child.selector_symbols(out),
        }
    }

    /// Substitutes a concrete value for a loop index in all selectors (used
    /// when unrolling loops during lowering).
    pub fn bind_index(&self, index: &str, value: usize) -> Expr {
        let sel = |s: &Selector| match s {
            Selector::Sym(n) if n == index => Selector::Lit(value),
            other => other.clone(),
        };
        match self {
            Expr::Operand(_) | Expr::Zero(_) => self.clone(),
            Expr::Product(fs) => Expr::Product(fs.iter().map(|f| f.bind_index(index, value)).collect()),
            Expr::Sum(ts) => Expr::Sum(
                ts.iter().map(|(s, t)| (*s, t.bind_index(index, value))).collect(),
            ),
            Expr::Transpose(x) => Expr::Transpose(Box::new(x.bind_index(index, value))),
            Expr::Inverse(x) => Expr::Inverse(Box::new(x.bind_index(index, value))),
            Expr::ScalarMul(c, x) => Expr::ScalarMul(c.clone(), Box::new(x.bind_index(index, value))),
            Expr::Block(g) => Expr::Block(
                g.iter()
                    .map(|row| row.iter().map(|b| b.bind_index(index, value)).collect())
                    .collect(),
            ),
            Expr::Diag(x) => Expr::Diag(Box::new(x.bind_index(index, value))),
            Expr::Element(x, r, c) => {
                Expr::Element(Box::new(x.bind_index(index, value)), sel(r), sel(c))
            }
            Expr::Column(x, c) => Expr::Column(Box::new(x.bind_index(index, value)), sel(c)),
            Expr::Solve { a, b, side } => Expr::Solve {
                a: Box::new(a.bind_index(index, value)),
                b: Box::new(b.bind_index(index, value)),
                side: *side,
            },
            Expr::Syrk { a, trans } => {
                Expr::Syrk { a: Box::new(a.bind_index(index, value)), trans: *trans }
            }
            Expr::Syr2k { a, b, trans } => Expr::Syr2k {
                a: Box::new(a.bind_index(index, value)),
                b: Box::new(b.bind_index(index, value)),
                trans: *trans,
            },
            Expr::Sub { child, row0, col0, rows, cols } => Expr::Sub {
                child: Box::new(child.bind_index(index, value)),
                row0: *row0,
                col0: *col0,
                rows: *rows,
                cols: *cols,
            },
        }
    }
}

/// Assignment target: a whole variable or a single element of one.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lhs {
    Var(String),
    /// `X[i]` for vectors, `X[i,j]` for matrices.
    Elem { name: String, row: Selector, col: Option<Selector> },
}

impl Lhs {
    pub fn name(&self) -> &str {
        match self {
            Lhs::Var(n) => n,
            Lhs::Elem { name, .. } => name,
        }
    }
}

/// Loop bound: a positive integer literal or a declared scalar symbol with an
/// integer literal initializer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bound {
    Lit(u64),
    Sym(String),
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Lit(v) => write!(f, "{}", v),
            Bound::Sym(s) => write!(f, "{}", s),
        }
    }
}

/// Program statement.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stmt {
    Assign { lhs: Lhs, expr: Expr },
    For { index: String, lo: Bound, hi: Bound, body: Vec<Stmt> },
}

impl Stmt {
    /// Names assigned by this statement (recursing into loop bodies).
    pub fn assigned_names(&self, out: &mut std::collections::BTreeSet<String>) {
        match self {
            Stmt::Assign { lhs, .. } => {
                out.insert(lhs.name().to_string());
            }
            Stmt::For { body, .. } => body.iter().for_each(|s| s.assigned_names(out)),
        }
    }
}

/// Declaration keyword, preserved so printing round-trips.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeclKind {
    Matrix,
    Vector,
    Scalar,
}

/// Operand declaration. Scalars may carry a literal initializer, which makes
/// them usable as compile-time loop bounds and known-sign coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Decl {
    pub name: String,
    pub shape: Shape,
    pub props: PropertySet,
    pub value: Option<f64>,
    pub kind: DeclKind,
}

/// Declaration table with stable order and name lookup.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Decls {
    order: Vec<Decl>,
    index: BTreeMap<String, usize>,
}

impl Decls {
    pub fn new() -> Decls {
        Decls::default()
    }

    pub fn push(&mut self, decl: Decl) -> Result<(), IrError> {
        if self.index.contains_key(&decl.name) {
            return Err(IrError::DuplicateDeclaration { name: decl.name });
        }
        self.index.insert(decl.name.clone(), self.order.len());
        self.order.push(decl);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Decl> {
        self.index.get(name).map(|&i| &self.order[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Decl> {
        self.order.iter()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// A checked program: declarations plus statements in source order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Program {
    pub decls: Decls,
    pub stmts: Vec<Stmt>,
}

impl Program {
    /// All variables assigned anywhere in the program.
    pub fn assigned_vars(&self) -> std::collections::BTreeSet<String> {
        let mut out = std::collections::BTreeSet::new();
        for s in &self.stmts {
            s.assigned_names(&mut out);
        }
        out
    }

    /// Adds a compiler temporary declaration with a name that does not clash
    /// with existing declarations; returns the chosen name.
    pub fn fresh_decl(&mut self, prefix: &str, shape: Shape, props: PropertySet) -> String {
        let mut i = 0usize;
        loop {
            let name = format!("{}{}", prefix, i);
            if !self.decls.contains(&name) {
                self.decls
                    .push(Decl {
                        name: name.clone(),
                        shape,
                        props,
                        value: None,
                        kind: if shape.is_scalar() {
                            DeclKind::Scalar
                        } else if shape.cols == 1 {
                            DeclKind::Vector
                        } else {
                            DeclKind::Matrix
                        },
                    })
                    .expect("fresh name");
                return name;
            }
            i += 1;
        }
    }
}

/// Errors raised by shape checking and program validation.
#[derive(Debug, Error, PartialEq)]
pub enum IrError {
    #[error("dimension mismatch: {detail}")]
    DimensionMismatch { detail: String },
    #[error("inverse of non-square {rows}x{cols} expression")]
    NonSquareInverse { rows: usize, cols: usize },
    #[error("operand `{name}` is not declared")]
    Undeclared { name: String },
    #[error("duplicate declaration of `{name}`")]
    DuplicateDeclaration { name: String },
    #[error("invalid properties on `{name}`: {detail}")]
    InvalidProperties { name: String, detail: String },
    #[error("zero block error: {detail}")]
    ZeroBlock { detail: String },
    #[error("invalid selector: {detail}")]
    BadSelector { detail: String },
    #[error("invalid loop: {detail}")]
    BadLoop { detail: String },
    #[error("scalar misuse: {detail}")]
    ScalarExpr { detail: String },
}
