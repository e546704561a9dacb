//! Common-subexpression elimination over the top-level statement list.
//!
//! Two mechanisms, run in order:
//!
//! 1. **Shared subtrees.** Repeated compute-bearing subtrees — including
//!    contiguous factor runs inside longer products, and occurrences that are
//!    transposes of one another — get pulled into a fresh temporary, with
//!    later occurrences reading it back (transposed where needed). Matching
//!    respects assignment order: occurrences group only when every operand
//!    they read has the same version, so an intervening write splits them.
//!
//! 2. **Shared partial sums.** Runs of consecutive sum statements over a
//!    common pool of terms delegate to the shared-sum scheduler, which finds
//!    an assignment sequence with fewer additions than evaluating each sum
//!    on its own (exactly for small pools, greedily otherwise).
//!
//! Every rewrite is speculative: a candidate is kept only when the whole
//! program's plan cost strictly drops, so sharing that would force an
//! explicit inverse or re-evaluate work never survives. Loop bodies are left
//! alone — invariant hoisting already surfaces repeated loop work at the top
//! level.

use std::collections::{BTreeMap, HashMap};

use crate::ir::{
    canonicalize, canonicalize_program, infer_properties, shape_of, Expr, Lhs, Program, Shape,
    Sign, Stmt,
};
use crate::ocse::{solve_exact, solve_greedy, schedule_sets, ExactOutcome, OcseInstance, StepOperand};

use super::{bears_compute, cost_of, map_expr, sum_terms, transposed, CseMode};

pub fn eliminate_common_subexpressions(
    program: &Program,
    mode: CseMode,
    max_exact_terms: usize,
) -> Program {
    let cur = canonicalize_program(program.clone());
    if cost_of(&cur).is_none() {
        return cur;
    }
    let cur = shared_subtrees(cur);
    shared_sums(cur, mode, max_exact_terms)
}

// -- phase 1: repeated subtrees ------------------------------------------------

type VersionVec = Vec<(String, u64)>;

struct Candidate {
    key: Expr,
    versions: VersionVec,
    weight: usize,
}

fn shared_subtrees(mut cur: Program) -> Program {
    for _ in 0..24 {
        let Some(base) = cost_of(&cur) else { break };
        let mut advanced = false;
        for cand in collect_candidates(&cur) {
            if let Some(trial) = try_share(&cur, &cand) {
                if cost_of(&trial).is_some_and(|c| c < base) {
                    cur = trial;
                    advanced = true;
                    break;
                }
            }
        }
        if !advanced {
            break;
        }
    }
    cur
}

fn collect_candidates(p: &Program) -> Vec<Candidate> {
    let mut versions: HashMap<String, u64> = HashMap::new();
    let mut seen: BTreeMap<(Expr, VersionVec), usize> = BTreeMap::new();
    for stmt in &p.stmts {
        match stmt {
            Stmt::Assign { lhs, expr } => {
                let mut subs = Vec::new();
                subtrees(expr, &mut subs);
                for ce in subs {
                    let key = orient(ce);
                    let vv = snapshot(&key, &versions);
                    *seen.entry((key, vv)).or_insert(0) += 1;
                }
                bump(&mut versions, lhs.name());
            }
            Stmt::For { body, .. } => {
                let mut assigned = std::collections::BTreeSet::new();
                for b in body {
                    b.assigned_names(&mut assigned);
                }
                for name in assigned {
                    bump(&mut versions, &name);
                }
            }
        }
    }
    let mut out: Vec<Candidate> = seen
        .into_iter()
        .filter(|(_, count)| *count >= 2)
        .map(|((key, versions), count)| {
            let weight = node_count(&key) * (count - 1);
            Candidate { key, versions, weight }
        })
        .collect();
    out.sort_by(|a, b| b.weight.cmp(&a.weight).then_with(|| a.key.cmp(&b.key)));
    out
}

/// Compute-bearing subtrees plus contiguous factor runs of longer products.
fn subtrees(e: &Expr, out: &mut Vec<Expr>) {
    if bears_compute(e) {
        out.push(e.clone());
    }
    if let Expr::Product(fs) = e {
        for len in 2..fs.len() {
            for start in 0..=fs.len() - len {
                out.push(Expr::Product(fs[start..start + len].to_vec()));
            }
        }
    }
    match e {
        Expr::Product(fs) => fs.iter().for_each(|f| subtrees(f, out)),
        Expr::Sum(ts) => ts.iter().for_each(|(_, t)| subtrees(t, out)),
        Expr::Transpose(x)
        | Expr::Inverse(x)
        | Expr::ScalarMul(_, x)
        | Expr::Diag(x)
        | Expr::Element(x, _, _)
        | Expr::Column(x, _)
        | Expr::Sub { child: x, .. } => subtrees(x, out),
        Expr::Solve { a, b, .. } | Expr::Syr2k { a, b, .. } => {
            subtrees(a, out);
            subtrees(b, out);
        }
        Expr::Syrk { a, .. } => subtrees(a, out),
        Expr::Block(g) => g.iter().flatten().for_each(|c| subtrees(c, out)),
        Expr::Operand(_) | Expr::Zero(_) => {}
    }
}

/// Canonical orientation: an expression and its transpose share one key.
fn orient(e: Expr) -> Expr {
    let can = canonicalize(e);
    let t = transposed(&can);
    if t < can {
        t
    } else {
        can
    }
}

fn snapshot(key: &Expr, versions: &HashMap<String, u64>) -> VersionVec {
    let mut names = std::collections::BTreeSet::new();
    key.referenced_operands(&mut names);
    names
        .into_iter()
        .map(|n| {
            let v = versions.get(&n).copied().unwrap_or(0);
            (n, v)
        })
        .collect()
}

fn bump(versions: &mut HashMap<String, u64>, name: &str) {
    *versions.entry(name.to_string()).or_insert(0) += 1;
}

fn node_count(e: &Expr) -> usize {
    let mut n = 1;
    match e {
        Expr::Product(fs) => n += fs.iter().map(node_count).sum::<usize>(),
        Expr::Sum(ts) => n += ts.iter().map(|(_, t)| node_count(t)).sum::<usize>(),
        Expr::Transpose(x)
        | Expr::Inverse(x)
        | Expr::ScalarMul(_, x)
        | Expr::Diag(x)
        | Expr::Element(x, _, _)
        | Expr::Column(x, _)
        | Expr::Sub { child: x, .. } => n += node_count(x),
        Expr::Solve { a, b, .. } | Expr::Syr2k { a, b, .. } => {
            n += node_count(a) + node_count(b);
        }
        Expr::Syrk { a, .. } => n += node_count(a),
        Expr::Block(g) => n += g.iter().flatten().map(node_count).sum::<usize>(),
        Expr::Operand(_) | Expr::Zero(_) => {}
    }
    n
}

/// Builds the rewritten program for one candidate, or `None` when nothing
/// ends up replaced.
fn try_share(cur: &Program, cand: &Candidate) -> Option<Program> {
    let mut trial = cur.clone();
    let shape = shape_of(&cand.key, &trial.decls).ok()?;
    let props = infer_properties(&cand.key, &trial.decls);
    let temp = trial.fresh_decl("cse", shape, props);
    let tkey = transposed(&cand.key);

    let mut versions: HashMap<String, u64> = HashMap::new();
    let mut first_hit: Option<usize> = None;
    let mut hits = 0usize;
    for (idx, stmt) in trial.stmts.iter_mut().enumerate() {
        match stmt {
            Stmt::Assign { lhs, expr } => {
                if snapshot(&cand.key, &versions) == cand.versions {
                    let (next, n) = replace_in(expr.clone(), &cand.key, &tkey, &temp);
                    if n > 0 {
                        *expr = next;
                        hits += n;
                        first_hit.get_or_insert(idx);
                    }
                }
                let name = lhs.name().to_string();
                bump(&mut versions, &name);
            }
            Stmt::For { body, .. } => {
                let mut assigned = std::collections::BTreeSet::new();
                for b in body.iter() {
                    b.assigned_names(&mut assigned);
                }
                for name in assigned {
                    bump(&mut versions, &name);
                }
            }
        }
    }
    if hits < 2 {
        return None;
    }
    let first = first_hit?;
    trial.stmts.insert(
        first,
        Stmt::Assign { lhs: Lhs::Var(temp), expr: cand.key.clone() },
    );
    Some(canonicalize_program(trial))
}

fn replace_in(e: Expr, key: &Expr, tkey: &Expr, temp: &str) -> (Expr, usize) {
    let mut hits = 0usize;
    let key_factors = match key {
        Expr::Product(fs) => fs.len(),
        _ => 0,
    };
    let out = map_expr(e, &mut |node| {
        if node == *key {
            hits += 1;
            return Expr::operand(temp);
        }
        if node == *tkey {
            hits += 1;
            return Expr::operand(temp).transpose();
        }
        if key_factors >= 2 {
            if let Expr::Product(fs) = &node {
                if fs.len() > key_factors {
                    let (spliced, n) = splice_runs(fs, key, tkey, temp, key_factors);
                    if n > 0 {
                        hits += n;
                        return spliced;
                    }
                }
            }
        }
        node
    });
    (out, hits)
}

fn splice_runs(
    fs: &[Expr],
    key: &Expr,
    tkey: &Expr,
    temp: &str,
    klen: usize,
) -> (Expr, usize) {
    let mut out: Vec<Expr> = Vec::with_capacity(fs.len());
    let mut hits = 0usize;
    let mut i = 0;
    while i < fs.len() {
        if i + klen <= fs.len() {
            let run = Expr::Product(fs[i..i + klen].to_vec());
            if run == *key {
                out.push(Expr::operand(temp));
                hits += 1;
                i += klen;
                continue;
            }
            if run == *tkey {
                out.push(Expr::operand(temp).transpose());
                hits += 1;
                i += klen;
                continue;
            }
        }
        out.push(fs[i].clone());
        i += 1;
    }
    let e = if out.len() == 1 {
        out.pop().expect("one factor")
    } else {
        Expr::Product(out)
    };
    (e, hits)
}

// -- phase 2: shared partial sums ----------------------------------------------

fn shared_sums(mut cur: Program, mode: CseMode, max_exact_terms: usize) -> Program {
    let mut i = 0;
    while i < cur.stmts.len() {
        let group = grow_group(&cur, i);
        if group.len() < 2 {
            i += 1;
            continue;
        }
        let end = *group.last().expect("non-empty group");
        match try_group(&cur, &group, mode, max_exact_terms) {
            Some(trial)
                if cost_of(&trial).zip(cost_of(&cur)).is_some_and(|(t, c)| t < c) =>
            {
                let inserted = trial.stmts.len() - cur.stmts.len();
                cur = trial;
                i = end + inserted + 1;
            }
            _ => i = end + 1,
        }
    }
    cur
}

/// Terms of an eligible sum statement: at least two, all distinct.
fn sum_atoms(p: &Program, idx: usize) -> Option<(String, Shape, Vec<(Sign, Expr)>)> {
    let Stmt::Assign { lhs: Lhs::Var(name), expr } = &p.stmts[idx] else {
        return None;
    };
    if !matches!(expr, Expr::Sum(_)) {
        return None;
    }
    let terms = sum_terms(expr);
    if terms.len() < 2 {
        return None;
    }
    let mut set = std::collections::BTreeSet::new();
    if !terms.iter().all(|t| set.insert(t.clone())) {
        return None;
    }
    let shape = p.decls.get(name).map(|d| d.shape)?;
    Some((name.clone(), shape, terms))
}

/// Longest run of consecutive eligible sums starting at `start` whose shapes
/// agree and whose terms never read a variable written earlier in the run.
fn grow_group(p: &Program, start: usize) -> Vec<usize> {
    let Some((name0, shape, _)) = sum_atoms(p, start) else {
        return Vec::new();
    };
    let mut written = std::collections::BTreeSet::from([name0]);
    let mut group = vec![start];
    let mut j = start + 1;
    while j < p.stmts.len() {
        let Some((name, s, terms)) = sum_atoms(p, j) else { break };
        if s != shape {
            break;
        }
        let mut reads = std::collections::BTreeSet::new();
        for (_, t) in &terms {
            t.referenced_operands(&mut reads);
        }
        if !reads.is_disjoint(&written) {
            break;
        }
        written.insert(name);
        group.push(j);
        j += 1;
    }
    group
}

fn try_group(
    cur: &Program,
    group: &[usize],
    mode: CseMode,
    max_exact_terms: usize,
) -> Option<Program> {
    // Distinct terms across the run, in first-seen order.
    let mut universe: Vec<(Sign, Expr)> = Vec::new();
    let mut index: BTreeMap<(Sign, Expr), usize> = BTreeMap::new();
    let mut equations: Vec<Vec<String>> = Vec::new();
    let mut shape = None;
    for &idx in group {
        let (_, s, terms) = sum_atoms(cur, idx)?;
        shape = Some(s);
        let mut eq = Vec::with_capacity(terms.len());
        for term in terms {
            let next = universe.len();
            let var = *index.entry(term.clone()).or_insert_with(|| {
                universe.push(term);
                next
            });
            eq.push(format!("t{var}"));
        }
        equations.push(eq);
    }
    if universe.len() > 16 {
        return None;
    }
    let naive: u32 = equations.iter().map(|eq| eq.len() as u32 - 1).sum();
    let vars: Vec<String> = (0..universe.len()).map(|v| format!("t{v}")).collect();
    let inst = OcseInstance::new(vars, &equations, naive).ok()?;
    let (omega, schedule) = match mode {
        CseMode::Exact if universe.len() <= max_exact_terms => match solve_exact(&inst).ok()? {
            ExactOutcome::Solved { omega, schedule } => (omega, schedule),
            ExactOutcome::Infeasible { .. } => return None,
        },
        _ => solve_greedy(&inst),
    };
    if omega >= naive {
        return None;
    }
    let sets = schedule_sets(&inst, &schedule).ok()?;
    let eq_masks = inst.equation_masks().to_vec();

    let mut trial = cur.clone();
    let shape = shape?;
    let mut temps: Vec<String> = Vec::with_capacity(schedule.steps.len());
    let mut step_stmts: Vec<Stmt> = Vec::with_capacity(schedule.steps.len());
    for (l, r) in &schedule.steps {
        let term = |op: &StepOperand, temps: &[String]| -> (Sign, Expr) {
            match op {
                StepOperand::Var(v) => universe[*v].clone(),
                StepOperand::Step(s) => (Sign::Plus, Expr::operand(&temps[*s])),
            }
        };
        let sum = Expr::Sum(vec![term(l, &temps), term(r, &temps)]);
        let props = infer_properties(&sum, &trial.decls);
        let name = trial.fresh_decl("cse", shape, props);
        step_stmts.push(Stmt::Assign { lhs: Lhs::Var(name.clone()), expr: sum });
        temps.push(name);
    }
    for (gi, &idx) in group.iter().enumerate() {
        let step = sets.iter().rposition(|&s| s == eq_masks[gi])?;
        let Stmt::Assign { lhs, .. } = &trial.stmts[idx] else { return None };
        trial.stmts[idx] =
            Stmt::Assign { lhs: lhs.clone(), expr: Expr::operand(&temps[step]) };
    }
    trial.stmts.splice(group[0]..group[0], step_stmts);
    Some(canonicalize_program(trial))
}
