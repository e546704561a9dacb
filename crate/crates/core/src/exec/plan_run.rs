//! Reference execution of kernel plans.
//!
//! [`exec_plan`] interprets a [`Plan`] call by call with simple dense
//! kernels.  Every call computes its result into fresh storage and only
//! then combines it with the destination (`beta` accumulation, region
//! writes), so aliasing between arguments and destinations — common in
//! update statements like `x := x + K*r` — cannot corrupt inputs that are
//! still being read.
//!
//! Factorization kernels (GETRF, POTRF, SYTRF) store an opaque factor in
//! their destination slot; only the matching solve/inverse kernels may read
//! it.  All buffers named by program declarations start from the provided
//! input environment, matching the naive evaluator's semantics.

use std::collections::HashMap;

use super::kernels::{
    self, cholesky, chol_solve, ldlt_factor, ldlt_solve, lu_factor, lu_inverse, lu_solve, matmul,
    tri_solve,
};
use super::{DenseMatrix, Environment, ExecError};
use crate::codegen::{Access, ArgRef, DstRef, Kernel, KernelCall, Plan, Scale, Uplo};
use crate::ir::{Decls, Shape, Side};
use crate::scalar::Scalar;

enum Slot<T: Scalar> {
    Mat(DenseMatrix<T>),
    Lu(kernels::Lu<T>),
    Chol(DenseMatrix<T>),
    Ldlt(kernels::Ldlt<T>),
}

struct Machine<'a, T: Scalar> {
    decls: &'a Decls,
    temp_shapes: HashMap<&'a str, Shape>,
    slots: HashMap<String, Slot<T>>,
}

fn rt(detail: impl Into<String>) -> ExecError {
    ExecError::PlanRuntime { detail: detail.into() }
}

fn shape_err(detail: impl Into<String>) -> ExecError {
    ExecError::ShapeMismatch { detail: detail.into() }
}

impl<'a, T: Scalar> Machine<'a, T> {
    fn shape_of(&self, name: &str) -> Result<Shape, ExecError> {
        self.temp_shapes
            .get(name)
            .copied()
            .or_else(|| self.decls.get(name).map(|d| d.shape))
            .ok_or_else(|| rt(format!("unknown buffer `{name}`")))
    }

    fn read_mat(&self, name: &str) -> Result<&DenseMatrix<T>, ExecError> {
        match self.slots.get(name) {
            Some(Slot::Mat(m)) => Ok(m),
            Some(_) => Err(rt(format!("factor slot `{name}` read as a plain matrix"))),
            None => Err(rt(format!("buffer `{name}` read before it is written"))),
        }
    }

    /// Reads the accessed part of an argument, without the transpose.
    fn read_part(&self, arg: &ArgRef) -> Result<DenseMatrix<T>, ExecError> {
        let m = self.read_mat(&arg.name)?;
        let base = m.shape();
        if !arg.access.in_bounds(base) {
            return Err(shape_err(format!(
                "access {} out of bounds for `{}` ({base})",
                arg.access, arg.name
            )));
        }
        Ok(match &arg.access {
            Access::Whole => m.clone(),
            Access::Element(r, c) => DenseMatrix::scalar(m[(*r, *c)]),
            Access::Row(r) => m.sub(*r, 0, 1, base.cols),
            Access::Col(c) => m.sub(0, *c, base.rows, 1),
            Access::Diagonal => {
                let k = base.rows.min(base.cols);
                let mut out = DenseMatrix::zeros(k, 1);
                for i in 0..k {
                    out[(i, 0)] = m[(i, i)];
                }
                out
            }
            Access::Sub { row0, col0, rows, cols } => m.sub(*row0, *col0, *rows, *cols),
        })
    }

    /// Reads an argument with its transpose applied.
    fn read_arg(&self, arg: &ArgRef) -> Result<DenseMatrix<T>, ExecError> {
        let part = self.read_part(arg)?;
        Ok(if arg.trans { part.transposed() } else { part })
    }

    fn scale_value(&self, s: &Option<Scale>, default: f64) -> Result<T, ExecError> {
        let Some(s) = s else {
            return Ok(T::from_literal(default));
        };
        let mut v = T::from_literal(s.lit);
        for sym in &s.syms {
            let m = self.read_mat(sym)?;
            if m.shape() != Shape::new(1, 1) {
                return Err(rt(format!("scale symbol `{sym}` is not a scalar buffer")));
            }
            v = v * m.scalar_value();
        }
        Ok(v)
    }

    /// Current contents of a destination part, zero-filled for temporaries
    /// that have not been written yet.
    fn dst_part(&self, dst: &DstRef) -> Result<DenseMatrix<T>, ExecError> {
        let base = self.shape_of(&dst.name)?;
        let part_shape = dst.access.shape_in(base);
        match self.slots.get(&dst.name) {
            Some(Slot::Mat(_)) => {
                let as_arg =
                    ArgRef { name: dst.name.clone(), trans: false, access: dst.access.clone() };
                self.read_part(&as_arg)
            }
            Some(_) => Err(rt(format!("factor slot `{}` used as a plain destination", dst.name))),
            None => Ok(DenseMatrix::from_shape(part_shape)),
        }
    }

    fn write_dst(&mut self, dst: &DstRef, value: DenseMatrix<T>) -> Result<(), ExecError> {
        let base = self.shape_of(&dst.name)?;
        if !dst.access.in_bounds(base) {
            return Err(shape_err(format!(
                "access {} out of bounds for `{}` ({base})",
                dst.access, dst.name
            )));
        }
        let want = dst.access.shape_in(base);
        if value.shape() != want {
            return Err(shape_err(format!(
                "writing {} into `{}{}` which is {want}",
                value.shape(),
                dst.name,
                dst.access
            )));
        }
        match &dst.access {
            Access::Whole => {
                self.slots.insert(dst.name.clone(), Slot::Mat(value));
            }
            access => {
                let mut current = match self.slots.remove(&dst.name) {
                    Some(Slot::Mat(m)) => m,
                    Some(_) => {
                        return Err(rt(format!(
                            "factor slot `{}` used as a plain destination",
                            dst.name
                        )))
                    }
                    None => DenseMatrix::from_shape(base),
                };
                match access {
                    Access::Element(r, c) => current[(*r, *c)] = value.scalar_value(),
                    Access::Row(r) => current.set_sub(*r, 0, &value),
                    Access::Col(c) => current.set_sub(0, *c, &value),
                    Access::Diagonal => {
                        for i in 0..value.rows() {
                            current[(i, i)] = value[(i, 0)];
                        }
                    }
                    Access::Sub { row0, col0, .. } => current.set_sub(*row0, *col0, &value),
                    Access::Whole => unreachable!(),
                }
                self.slots.insert(dst.name.clone(), Slot::Mat(current));
            }
        }
        Ok(())
    }

    /// `value*alpha + beta*dst`, reading the destination only when beta is
    /// nonzero.
    fn combine_and_write(
        &mut self,
        call: &KernelCall,
        mut value: DenseMatrix<T>,
    ) -> Result<(), ExecError> {
        let alpha = self.scale_value(&call.alpha, 1.0)?;
        if alpha != T::one() {
            scale_in_place(&mut value, alpha);
        }
        let beta = self.scale_value(&call.beta, 0.0)?;
        if beta != T::zero() {
            let prev = self.dst_part(&call.dst)?;
            if prev.shape() != value.shape() {
                return Err(shape_err(format!(
                    "accumulating {} into `{}{}` which is {}",
                    value.shape(),
                    call.dst.name,
                    call.dst.access,
                    prev.shape()
                )));
            }
            for i in 0..value.rows() {
                for j in 0..value.cols() {
                    value[(i, j)] = value[(i, j)] + beta * prev[(i, j)];
                }
            }
        }
        self.write_dst(&call.dst, value)
    }

    fn arg_a<'c>(&self, call: &'c KernelCall) -> Result<&'c ArgRef, ExecError> {
        call.a
            .as_ref()
            .ok_or_else(|| rt(format!("{} is missing its first argument", call.kernel)))
    }

    fn arg_b<'c>(&self, call: &'c KernelCall) -> Result<&'c ArgRef, ExecError> {
        call.b
            .as_ref()
            .ok_or_else(|| rt(format!("{} is missing its second argument", call.kernel)))
    }

    fn step(&mut self, call: &KernelCall) -> Result<(), ExecError> {
        let side = call.side.unwrap_or(Side::Left);
        match call.kernel {
            Kernel::Gemm | Kernel::Gemv | Kernel::Symm => {
                let a = self.read_arg(self.arg_a(call)?)?;
                let b = self.read_arg(self.arg_b(call)?)?;
                let (a, b) = if call.kernel == Kernel::Symm && side == Side::Right {
                    (b, a)
                } else {
                    (a, b)
                };
                if a.cols() != b.rows() {
                    return Err(shape_err(format!(
                        "{}: inner dimensions {} vs {}",
                        call.kernel,
                        a.shape(),
                        b.shape()
                    )));
                }
                self.combine_and_write(call, matmul(&a, &b))
            }
            Kernel::Syrk => {
                let a = self.read_arg(self.arg_a(call)?)?;
                let r = matmul(&a, &a.transposed());
                self.combine_and_write(call, r)
            }
            Kernel::Syr2k => {
                let a = self.read_arg(self.arg_a(call)?)?;
                let b = self.read_arg(self.arg_b(call)?)?;
                let mut r = matmul(&a, &b.transposed());
                let q = matmul(&b, &a.transposed());
                for i in 0..r.rows() {
                    for j in 0..r.cols() {
                        r[(i, j)] = r[(i, j)] + q[(i, j)];
                    }
                }
                self.combine_and_write(call, r)
            }
            Kernel::Trmm => {
                let t = self.read_arg(self.arg_a(call)?)?;
                let b = self.read_arg(self.arg_b(call)?)?;
                let r = match side {
                    Side::Left => matmul(&t, &b),
                    Side::Right => matmul(&b, &t),
                };
                self.combine_and_write(call, r)
            }
            Kernel::Trsm | Kernel::Trsv => {
                let aref = self.arg_a(call)?;
                let t = self.read_part(aref)?;
                let b = self.read_arg(self.arg_b(call)?)?;
                let lower = call.uplo.unwrap_or(Uplo::Lower) == Uplo::Lower;
                let r = match side {
                    Side::Left => tri_solve(&t, &b, lower, false, aref.trans)?,
                    // X·op(T) = B  <=>  op(T)'·X' = B'.
                    Side::Right => {
                        tri_solve(&t, &b.transposed(), lower, false, !aref.trans)?.transposed()
                    }
                };
                self.combine_and_write(call, r)
            }
            Kernel::Getrf => {
                let a = self.read_arg(self.arg_a(call)?)?;
                let f = lu_factor(&a)?;
                self.slots.insert(call.dst.name.clone(), Slot::Lu(f));
                Ok(())
            }
            Kernel::Getrs => {
                let aref = self.arg_a(call)?;
                let b = self.read_arg(self.arg_b(call)?)?;
                let r = match self.slots.get(&aref.name) {
                    Some(Slot::Lu(f)) => lu_solve(f, &b, aref.trans)?,
                    _ => return Err(rt(format!("GETRS needs a GETRF factor in `{}`", aref.name))),
                };
                self.combine_and_write(call, r)
            }
            Kernel::Getri => {
                let aref = self.arg_a(call)?;
                let r = match self.slots.get(&aref.name) {
                    Some(Slot::Lu(f)) => lu_inverse(f)?,
                    _ => return Err(rt(format!("GETRI needs a GETRF factor in `{}`", aref.name))),
                };
                let r = if aref.trans { r.transposed() } else { r };
                self.combine_and_write(call, r)
            }
            Kernel::Potrf => {
                let a = self.read_arg(self.arg_a(call)?)?;
                let l = cholesky(&a)?;
                self.slots.insert(call.dst.name.clone(), Slot::Chol(l));
                Ok(())
            }
            Kernel::Potrs => {
                let aref = self.arg_a(call)?;
                let b = self.read_arg(self.arg_b(call)?)?;
                let r = match self.slots.get(&aref.name) {
                    Some(Slot::Chol(l)) => chol_solve(l, &b)?,
                    _ => return Err(rt(format!("POTRS needs a POTRF factor in `{}`", aref.name))),
                };
                self.combine_and_write(call, r)
            }
            Kernel::Sytrf => {
                let a = self.read_arg(self.arg_a(call)?)?;
                let f = ldlt_factor(&a)?;
                self.slots.insert(call.dst.name.clone(), Slot::Ldlt(f));
                Ok(())
            }
            Kernel::Sytrs => {
                let aref = self.arg_a(call)?;
                let b = self.read_arg(self.arg_b(call)?)?;
                let r = match self.slots.get(&aref.name) {
                    Some(Slot::Ldlt(f)) => ldlt_solve(f, &b)?,
                    _ => return Err(rt(format!("SYTRS needs a SYTRF factor in `{}`", aref.name))),
                };
                self.combine_and_write(call, r)
            }
            Kernel::Diagscale => {
                let d = self.read_part(self.arg_a(call)?)?;
                let b = self.read_arg(self.arg_b(call)?)?;
                let mut r = b;
                match side {
                    Side::Left => {
                        for i in 0..r.rows() {
                            let di = d[(i, i)];
                            for j in 0..r.cols() {
                                r[(i, j)] = di * r[(i, j)];
                            }
                        }
                    }
                    Side::Right => {
                        for j in 0..r.cols() {
                            let dj = d[(j, j)];
                            for i in 0..r.rows() {
                                r[(i, j)] = r[(i, j)] * dj;
                            }
                        }
                    }
                }
                self.combine_and_write(call, r)
            }
            Kernel::Diagsolve => {
                let d = self.read_part(self.arg_a(call)?)?;
                let b = self.read_arg(self.arg_b(call)?)?;
                let tol = T::pivot_tol() * d.max_abs().max(T::one());
                let n = d.rows();
                for i in 0..n {
                    if d[(i, i)].abs() <= tol {
                        return Err(ExecError::SingularMatrix {
                            detail: format!("diagonal solve hit a zero entry at {i}"),
                        });
                    }
                }
                let mut r = b;
                match side {
                    Side::Left => {
                        for i in 0..r.rows() {
                            let di = d[(i, i)];
                            for j in 0..r.cols() {
                                r[(i, j)] = r[(i, j)] / di;
                            }
                        }
                    }
                    Side::Right => {
                        for j in 0..r.cols() {
                            let dj = d[(j, j)];
                            for i in 0..r.rows() {
                                r[(i, j)] = r[(i, j)] / dj;
                            }
                        }
                    }
                }
                self.combine_and_write(call, r)
            }
            Kernel::Add => {
                let a = self.read_arg(self.arg_a(call)?)?;
                let alpha = self.scale_value(&call.alpha, 1.0)?;
                let mut r = self.dst_part(&call.dst)?;
                if r.shape() != a.shape() {
                    return Err(shape_err(format!(
                        "ADD of {} into {}",
                        a.shape(),
                        r.shape()
                    )));
                }
                for i in 0..r.rows() {
                    for j in 0..r.cols() {
                        r[(i, j)] = r[(i, j)] + alpha * a[(i, j)];
                    }
                }
                self.write_dst(&call.dst, r)
            }
            Kernel::Axpy => {
                let x = self.read_arg(self.arg_a(call)?)?;
                let alpha = self.scale_value(&call.alpha, 1.0)?;
                let r = self.dst_part(&call.dst)?;
                let n = x.shape().len();
                if !is_vec(x.shape()) || !is_vec(r.shape()) || r.shape().len() != n {
                    return Err(shape_err(format!(
                        "AXPY of {} into {}",
                        x.shape(),
                        r.shape()
                    )));
                }
                let xs: Vec<T> = x.vector_data().to_vec();
                let mut flat: Vec<T> = r.vector_data().to_vec();
                for k in 0..n {
                    flat[k] = flat[k] + alpha * xs[k];
                }
                let mut out = DenseMatrix::from_shape(r.shape());
                for (k, v) in flat.into_iter().enumerate() {
                    let (i, j) = if r.shape().cols == 1 { (k, 0) } else { (0, k) };
                    out[(i, j)] = v;
                }
                self.write_dst(&call.dst, out)
            }
            Kernel::Scal => {
                let alpha = self.scale_value(&call.alpha, 1.0)?;
                let mut r = self.dst_part(&call.dst)?;
                scale_in_place(&mut r, alpha);
                self.write_dst(&call.dst, r)
            }
            Kernel::Dot => {
                let x = self.read_arg(self.arg_a(call)?)?;
                let y = self.read_arg(self.arg_b(call)?)?;
                if !is_vec(x.shape())
                    || !is_vec(y.shape())
                    || x.shape().len() != y.shape().len()
                {
                    return Err(shape_err(format!(
                        "DOT of {} with {}",
                        x.shape(),
                        y.shape()
                    )));
                }
                let alpha = self.scale_value(&call.alpha, 1.0)?;
                let mut s = T::zero();
                let xs = x.vector_data();
                let ys = y.vector_data();
                for k in 0..xs.len() {
                    s = s + xs[k] * ys[k];
                }
                self.write_dst(&call.dst, DenseMatrix::scalar(alpha * s))
            }
            Kernel::Ger => {
                let x = self.read_arg(self.arg_a(call)?)?;
                let y = self.read_arg(self.arg_b(call)?)?;
                let alpha = self.scale_value(&call.alpha, 1.0)?;
                let mut r = self.dst_part(&call.dst)?;
                if !is_vec(x.shape())
                    || !is_vec(y.shape())
                    || x.shape().len() != r.rows()
                    || y.shape().len() != r.cols()
                {
                    return Err(shape_err(format!(
                        "GER of {} x {} into {}",
                        x.shape(),
                        y.shape(),
                        r.shape()
                    )));
                }
                let xs = x.vector_data();
                let ys = y.vector_data();
                for i in 0..r.rows() {
                    for j in 0..r.cols() {
                        r[(i, j)] = r[(i, j)] + alpha * xs[i] * ys[j];
                    }
                }
                self.write_dst(&call.dst, r)
            }
            Kernel::Copy | Kernel::Extract => {
                let v = self.read_arg(self.arg_a(call)?)?;
                self.write_dst(&call.dst, v)
            }
        }
    }
}

/// Row and column vectors are interchangeable for the vector kernels.
fn is_vec(s: Shape) -> bool {
    s.rows == 1 || s.cols == 1
}

fn scale_in_place<T: Scalar>(m: &mut DenseMatrix<T>, s: T) {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            m[(i, j)] = m[(i, j)] * s;
        }
    }
}

/// Executes `plan` against `inputs` (which must bind every declaration in
/// `decls`) and returns the final environment: inputs, overwritten by the
/// plan's outputs.
pub fn exec_plan<T: Scalar>(
    plan: &Plan,
    decls: &Decls,
    inputs: &Environment<T>,
) -> Result<Environment<T>, ExecError> {
    let mut machine = Machine {
        decls,
        temp_shapes: plan.temporaries.iter().map(|t| (t.name.as_str(), t.shape)).collect(),
        slots: HashMap::new(),
    };
    for decl in decls.iter() {
        let m = inputs.require(&decl.name)?;
        if m.shape() != decl.shape {
            return Err(shape_err(format!(
                "input `{}` is {}, declared {}",
                decl.name,
                m.shape(),
                decl.shape
            )));
        }
        machine.slots.insert(decl.name.clone(), Slot::Mat(m.clone()));
    }
    for call in &plan.calls {
        machine.step(call)?;
    }
    let mut out = inputs.clone();
    for (var, buffer) in &plan.outputs {
        let m = machine.read_mat(buffer)?;
        out.insert(var.clone(), m.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{cost, plan_cost, TempDecl};
    use crate::exec::SplitMix64;
    use crate::ir::{Decl, DeclKind, PropertySet};

    fn decls_with(entries: &[(&str, usize, usize)]) -> Decls {
        let mut decls = Decls::new();
        for (name, r, c) in entries {
            decls
                .push(Decl {
                    name: name.to_string(),
                    shape: Shape::new(*r, *c),
                    props: PropertySet::FULL,
                    value: None,
                    kind: DeclKind::Matrix,
                })
                .unwrap();
        }
        decls
    }

    fn rand_mat(r: usize, c: usize, seed: u64) -> DenseMatrix<f64> {
        let mut rng = SplitMix64::new(seed);
        let mut m = DenseMatrix::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                m[(i, j)] = rng.next_unit();
            }
        }
        m
    }

    #[test]
    fn gemm_with_beta_one_accumulates_into_the_destination() {
        let decls = decls_with(&[("A", 3, 4), ("B", 4, 2), ("C", 3, 2)]);
        let mut env: Environment = Environment::new();
        env.insert("A", rand_mat(3, 4, 1));
        env.insert("B", rand_mat(4, 2, 2));
        env.insert("C", rand_mat(3, 2, 3));

        let mut plan = Plan::default();
        let mut call = KernelCall::new(Kernel::Gemm, DstRef::whole("C"), cost::gemm(3, 4, 2));
        call.alpha = Some(Scale::one());
        call.a = Some(ArgRef::whole("A", false));
        call.b = Some(ArgRef::whole("B", false));
        call.beta = Some(Scale::one());
        plan.calls.push(call);
        plan.outputs.insert("C".into(), "C".into());
        plan.total_flops = plan_cost(&plan);

        let out = exec_plan(&plan, &decls, &env).unwrap();
        let want = {
            let ab = matmul(env.get("A").unwrap(), env.get("B").unwrap());
            let c0 = env.get("C").unwrap();
            let mut w = ab;
            for i in 0..3 {
                for j in 0..2 {
                    w[(i, j)] += c0[(i, j)];
                }
            }
            w
        };
        let got = out.get("C").unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((got[(i, j)] - want[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn factor_once_solve_twice() {
        let decls = decls_with(&[("E", 5, 5), ("y", 5, 1), ("w", 5, 1), ("p", 5, 1), ("q", 5, 1)]);
        let mut env: Environment = Environment::new();
        env.insert("E", rand_mat(5, 5, 10));
        env.insert("y", rand_mat(5, 1, 11));
        env.insert("w", rand_mat(5, 1, 12));
        env.insert("p", DenseMatrix::zeros(5, 1));
        env.insert("q", DenseMatrix::zeros(5, 1));

        let mut plan = Plan::default();
        plan.temporaries.push(TempDecl { name: "T0".into(), shape: Shape::new(5, 5) });
        let mut f = KernelCall::new(Kernel::Getrf, DstRef::whole("T0"), cost::getrf(5));
        f.a = Some(ArgRef::whole("E", false));
        plan.calls.push(f);
        for (rhs, dst) in [("y", "p"), ("w", "q")] {
            let mut s = KernelCall::new(Kernel::Getrs, DstRef::whole(dst), cost::getrs(5, 1));
            s.a = Some(ArgRef::whole("T0", false));
            s.b = Some(ArgRef::whole(rhs, false));
            plan.calls.push(s);
        }
        plan.outputs.insert("p".into(), "p".into());
        plan.outputs.insert("q".into(), "q".into());
        plan.total_flops = plan_cost(&plan);

        let out = exec_plan(&plan, &decls, &env).unwrap();
        let inv = kernels::gauss_jordan_inverse(env.get("E").unwrap()).unwrap();
        for (rhs, dst) in [("y", "p"), ("w", "q")] {
            let want = matmul(&inv, env.get(rhs).unwrap());
            let got = out.get(dst).unwrap();
            for i in 0..5 {
                assert!((got[(i, 0)] - want[(i, 0)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transposed_getrs_solves_the_transposed_system() {
        let decls = decls_with(&[("E", 4, 4), ("y", 4, 1), ("x", 4, 1)]);
        let mut env: Environment = Environment::new();
        env.insert("E", rand_mat(4, 4, 20));
        env.insert("y", rand_mat(4, 1, 21));
        env.insert("x", DenseMatrix::zeros(4, 1));

        let mut plan = Plan::default();
        plan.temporaries.push(TempDecl { name: "T0".into(), shape: Shape::new(4, 4) });
        let mut f = KernelCall::new(Kernel::Getrf, DstRef::whole("T0"), cost::getrf(4));
        f.a = Some(ArgRef::whole("E", false));
        plan.calls.push(f);
        let mut s = KernelCall::new(Kernel::Getrs, DstRef::whole("x"), cost::getrs(4, 1));
        s.a = Some(ArgRef::whole("T0", true));
        s.b = Some(ArgRef::whole("y", false));
        plan.calls.push(s);
        plan.outputs.insert("x".into(), "x".into());
        plan.total_flops = plan_cost(&plan);

        let out = exec_plan(&plan, &decls, &env).unwrap();
        let inv_t = kernels::gauss_jordan_inverse(env.get("E").unwrap())
            .unwrap()
            .transposed();
        let want = matmul(&inv_t, env.get("y").unwrap());
        let got = out.get("x").unwrap();
        for i in 0..4 {
            assert!((got[(i, 0)] - want[(i, 0)]).abs() < 1e-10);
        }
    }

    #[test]
    fn diagscale_applies_on_both_sides() {
        let decls = decls_with(&[("D", 3, 3), ("B", 3, 3), ("L", 3, 3), ("R", 3, 3)]);
        let mut env: Environment = Environment::new();
        let mut d = DenseMatrix::zeros(3, 3);
        for i in 0..3 {
            d[(i, i)] = (i + 2) as f64;
        }
        env.insert("D", d.clone());
        env.insert("B", rand_mat(3, 3, 30));
        env.insert("L", DenseMatrix::zeros(3, 3));
        env.insert("R", DenseMatrix::zeros(3, 3));

        let mut plan = Plan::default();
        for (dst, side) in [("L", Side::Left), ("R", Side::Right)] {
            let mut c =
                KernelCall::new(Kernel::Diagscale, DstRef::whole(dst), cost::diagscale(3, 3));
            c.alpha = Some(Scale::one());
            c.a = Some(ArgRef::whole("D", false));
            c.b = Some(ArgRef::whole("B", false));
            c.side = Some(side);
            c.beta = Some(Scale::zero());
            plan.calls.push(c);
        }
        plan.outputs.insert("L".into(), "L".into());
        plan.outputs.insert("R".into(), "R".into());
        plan.total_flops = plan_cost(&plan);

        let out = exec_plan(&plan, &decls, &env).unwrap();
        let b = env.get("B").unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(out.get("L").unwrap()[(i, j)], d[(i, i)] * b[(i, j)]);
                assert_eq!(out.get("R").unwrap()[(i, j)], b[(i, j)] * d[(j, j)]);
            }
        }
    }

    #[test]
    fn dot_writes_into_an_element_destination() {
        let decls = decls_with(&[("x", 4, 1), ("y", 4, 1), ("M", 2, 2)]);
        let mut env: Environment = Environment::new();
        env.insert("x", rand_mat(4, 1, 40));
        env.insert("y", rand_mat(4, 1, 41));
        env.insert("M", DenseMatrix::zeros(2, 2));

        let mut plan = Plan::default();
        let mut c = KernelCall::new(
            Kernel::Dot,
            DstRef { name: "M".into(), access: Access::Element(1, 0) },
            cost::dot(4),
        );
        c.a = Some(ArgRef::whole("x", true));
        c.b = Some(ArgRef::whole("y", false));
        plan.calls.push(c);
        plan.outputs.insert("M".into(), "M".into());
        plan.total_flops = plan_cost(&plan);

        let out = exec_plan(&plan, &decls, &env).unwrap();
        let x = env.get("x").unwrap();
        let y = env.get("y").unwrap();
        let dot: f64 = (0..4).map(|k| x[(k, 0)] * y[(k, 0)]).sum();
        assert!((out.get("M").unwrap()[(1, 0)] - dot).abs() < 1e-14);
        assert_eq!(out.get("M").unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn copy_assembles_block_regions() {
        let decls = decls_with(&[("A", 2, 2), ("B", 2, 2), ("K", 4, 4)]);
        let mut env: Environment = Environment::new();
        env.insert("A", rand_mat(2, 2, 50));
        env.insert("B", rand_mat(2, 2, 51));
        env.insert("K", DenseMatrix::zeros(4, 4));

        let mut plan = Plan::default();
        for (src, r0, c0) in [("A", 0usize, 0usize), ("B", 2, 2)] {
            let mut c = KernelCall::new(
                Kernel::Copy,
                DstRef {
                    name: "K".into(),
                    access: Access::Sub { row0: r0, col0: c0, rows: 2, cols: 2 },
                },
                0,
            );
            c.a = Some(ArgRef::whole(src, false));
            plan.calls.push(c);
        }
        plan.outputs.insert("K".into(), "K".into());
        plan.total_flops = 0;

        let out = exec_plan(&plan, &decls, &env).unwrap();
        let k = out.get("K").unwrap();
        assert_eq!(k[(0, 0)], env.get("A").unwrap()[(0, 0)]);
        assert_eq!(k[(3, 3)], env.get("B").unwrap()[(1, 1)]);
        assert_eq!(k[(0, 3)], 0.0);
    }

    #[test]
    fn trsm_right_side_matches_the_explicit_inverse() {
        let decls = decls_with(&[("L", 3, 3), ("B", 2, 3), ("X", 2, 3)]);
        let mut l = rand_mat(3, 3, 60);
        for i in 0..3 {
            for j in i + 1..3 {
                l[(i, j)] = 0.0;
            }
            l[(i, i)] = 2.0 + l[(i, i)].abs();
        }
        let mut env: Environment = Environment::new();
        env.insert("L", l.clone());
        env.insert("B", rand_mat(2, 3, 61));
        env.insert("X", DenseMatrix::zeros(2, 3));

        let mut plan = Plan::default();
        let mut c = KernelCall::new(Kernel::Trsm, DstRef::whole("X"), cost::trsm(3, 2));
        c.a = Some(ArgRef::whole("L", false));
        c.b = Some(ArgRef::whole("B", false));
        c.side = Some(Side::Right);
        c.uplo = Some(Uplo::Lower);
        plan.calls.push(c);
        plan.outputs.insert("X".into(), "X".into());
        plan.total_flops = plan_cost(&plan);

        let out = exec_plan(&plan, &decls, &env).unwrap();
        let want = matmul(
            env.get("B").unwrap(),
            &kernels::gauss_jordan_inverse(&l).unwrap(),
        );
        let got = out.get("X").unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((got[(i, j)] - want[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn factor_slot_misuse_is_a_runtime_error() {
        let decls = decls_with(&[("E", 3, 3), ("B", 3, 3), ("C", 3, 3)]);
        let mut env: Environment = Environment::new();
        env.insert("E", rand_mat(3, 3, 70));
        env.insert("B", rand_mat(3, 3, 71));
        env.insert("C", DenseMatrix::zeros(3, 3));

        let mut plan = Plan::default();
        plan.temporaries.push(TempDecl { name: "T0".into(), shape: Shape::new(3, 3) });
        let mut f = KernelCall::new(Kernel::Getrf, DstRef::whole("T0"), cost::getrf(3));
        f.a = Some(ArgRef::whole("E", false));
        plan.calls.push(f);
        let mut g = KernelCall::new(Kernel::Gemm, DstRef::whole("C"), cost::gemm(3, 3, 3));
        g.alpha = Some(Scale::one());
        g.a = Some(ArgRef::whole("T0", false));
        g.b = Some(ArgRef::whole("B", false));
        g.beta = Some(Scale::zero());
        plan.calls.push(g);
        plan.outputs.insert("C".into(), "C".into());
        plan.total_flops = plan_cost(&plan);

        let err = exec_plan(&plan, &decls, &env).unwrap_err();
        assert!(matches!(err, ExecError::PlanRuntime { .. }), "{err}");
    }
}
