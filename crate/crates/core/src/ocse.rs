//! Minimum-step computation of sums that share terms.
//!
//! An instance asks for a set of equations, each a *set* of variables (the
//! operation is associative and commutative and no variable repeats within an
//! equation), to be produced by a sequence of binary assignments
//! `u_i = s_i + t_i` where each operand is a variable or an earlier `u_j`.
//! The objective ω is the number of assignments; deciding whether ω ≤ Ω is
//! NP-complete, which is why [`solve_exact`] carries a size guard and
//! [`solve_greedy`] exists for everything else.
//!
//! The disjoint-operand variant ([`EcInstance`], where every step must union
//! two *disjoint* sets) is the classic hard core of the problem;
//! [`reduce_ec_to_ocse`] converts it and [`schedule_as_disjoint_unions`] maps
//! qualifying schedules back.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OcseError {
    #[error("duplicate variable name `{name}`")]
    DuplicateName { name: String },
    #[error("too many variables: {count} (bitmask sets support at most 16)")]
    TooManyVariables { count: usize },
    #[error("equation {index} is empty")]
    EmptyEquation { index: usize },
    #[error("unknown variable `{name}` in equation {index}")]
    UnknownVariable { name: String, index: usize },
    #[error("variable `{name}` repeats in equation {index}")]
    DuplicateVariable { name: String, index: usize },
    #[error("the step bound must be positive")]
    BadBound,
    #[error("instance too large for exact search: {detail}")]
    InstanceTooLarge { detail: String },
    #[error("malformed schedule: {detail}")]
    MalformedSchedule { detail: String },
    #[error("bad instance text: {detail}")]
    ParseError { detail: String },
}

/// Shared-term sum instance: variables, equation sets (as bitmasks over the
/// variable list), and the step bound Ω. Single-variable equations need no
/// assignment and are dropped during construction.
#[derive(Clone, Debug, PartialEq)]
pub struct OcseInstance {
    vars: Vec<String>,
    equations: Vec<u16>,
    bound: u32,
}

impl OcseInstance {
    pub fn new(
        vars: Vec<String>,
        equations: &[Vec<String>],
        bound: u32,
    ) -> Result<OcseInstance, OcseError> {
        if bound == 0 {
            return Err(OcseError::BadBound);
        }
        if vars.len() > 16 {
            return Err(OcseError::TooManyVariables { count: vars.len() });
        }
        let mut index = HashMap::new();
        for (i, v) in vars.iter().enumerate() {
            if index.insert(v.clone(), i).is_some() {
                return Err(OcseError::DuplicateName { name: v.clone() });
            }
        }
        let mut masks = Vec::new();
        for (k, eq) in equations.iter().enumerate() {
            if eq.is_empty() {
                return Err(OcseError::EmptyEquation { index: k + 1 });
            }
            let mut mask: u16 = 0;
            for name in eq {
                let i = *index.get(name).ok_or_else(|| OcseError::UnknownVariable {
                    name: name.clone(),
                    index: k + 1,
                })?;
                if mask & (1 << i) != 0 {
                    return Err(OcseError::DuplicateVariable {
                        name: name.clone(),
                        index: k + 1,
                    });
                }
                mask |= 1 << i;
            }
            if mask.count_ones() >= 2 {
                masks.push(mask);
            }
        }
        Ok(OcseInstance { vars, equations: masks, bound })
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// Normalized equation bitmasks (each with at least two variables).
    pub fn equation_masks(&self) -> &[u16] {
        &self.equations
    }

    pub fn bound(&self) -> u32 {
        self.bound
    }
}

/// Operand of one assignment: an input variable or an earlier step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOperand {
    Var(usize),
    Step(usize),
}

/// Ordered assignments `u_i = s_i + t_i`; ω is `steps.len()`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Schedule {
    pub steps: Vec<(StepOperand, StepOperand)>,
}

/// Result of the exact solver.
#[derive(Clone, Debug, PartialEq)]
pub enum ExactOutcome {
    Solved { omega: u32, schedule: Schedule },
    /// The true minimum exceeds the instance bound Ω.
    Infeasible { bound: u32, minimal: u32 },
}

/// Variable set computed by each step, validating operand references.
pub fn schedule_sets(inst: &OcseInstance, sched: &Schedule) -> Result<Vec<u16>, OcseError> {
    let mut sets: Vec<u16> = Vec::with_capacity(sched.steps.len());
    for (i, (s, t)) in sched.steps.iter().enumerate() {
        let resolve = |op: &StepOperand| -> Result<u16, OcseError> {
            match *op {
                StepOperand::Var(v) if v < inst.vars.len() => Ok(1 << v),
                StepOperand::Var(v) => Err(OcseError::MalformedSchedule {
                    detail: format!("variable index {} out of range", v),
                }),
                StepOperand::Step(j) if j < i => Ok(sets[j]),
                StepOperand::Step(j) => Err(OcseError::MalformedSchedule {
                    detail: format!("step u{} references u{}, which is not earlier", i + 1, j + 1),
                }),
            }
        };
        let set = resolve(s)? | resolve(t)?;
        sets.push(set);
    }
    Ok(sets)
}

/// True iff every equation set equals some step's set and ω ≤ Ω.
/// Runs in time polynomial in the schedule and instance sizes.
pub fn verify_schedule(inst: &OcseInstance, sched: &Schedule) -> Result<bool, OcseError> {
    let sets = schedule_sets(inst, sched)?;
    let have: HashSet<u16> = sets.into_iter().collect();
    Ok(inst.equations.iter().all(|e| have.contains(e))
        && sched.steps.len() as u32 <= inst.bound)
}

const MAX_EXACT_VARS: usize = 10;
const MAX_EXACT_TOTAL_TERMS: u32 = 24;

/// Globally minimal schedule by iterative deepening, or
/// [`ExactOutcome::Infeasible`] when that minimum exceeds Ω.
///
/// Guarded to |A| ≤ 10 and Σ|equation| ≤ 24; the search is exponential in
/// the worst case.
pub fn solve_exact(inst: &OcseInstance) -> Result<ExactOutcome, OcseError> {
    if inst.vars.len() > MAX_EXACT_VARS {
        return Err(OcseError::InstanceTooLarge {
            detail: format!("{} variables (limit {})", inst.vars.len(), MAX_EXACT_VARS),
        });
    }
    let total: u32 = inst.equations.iter().map(|e| e.count_ones()).sum();
    if total > MAX_EXACT_TOTAL_TERMS {
        return Err(OcseError::InstanceTooLarge {
            detail: format!("{} total terms (limit {})", total, MAX_EXACT_TOTAL_TERMS),
        });
    }
    let (omega, masks) = min_step_sequence(inst.vars.len(), &inst.equations, false);
    if omega > inst.bound {
        return Ok(ExactOutcome::Infeasible { bound: inst.bound, minimal: omega });
    }
    Ok(ExactOutcome::Solved { omega, schedule: masks_to_schedule(&masks) })
}

/// Deterministic heuristic: repeatedly commit the available pair whose
/// combined set lies in the most unmet equations, preferring the largest
/// such set (small combined sets are often dead-end fragments that complete
/// nothing). Remaining ties take the smallest operand pair, with variables
/// in declaration order. Always yields a valid schedule; never fewer steps
/// than [`solve_exact`].
pub fn solve_greedy(inst: &OcseInstance) -> (u32, Schedule) {
    let targets: BTreeSet<u16> = inst.equations.iter().copied().collect();
    let singles: Vec<u16> = (0..inst.vars.len()).map(|i| 1 << i).collect();
    let mut pool: Vec<u16> = Vec::new();
    let mut steps: Vec<(u16, u16, u16)> = Vec::new();
    loop {
        let unmet: Vec<u16> =
            targets.iter().copied().filter(|t| !pool.contains(t)).collect();
        if unmet.is_empty() {
            break;
        }
        let mut avail: Vec<u16> = singles.iter().copied().chain(pool.iter().copied()).collect();
        avail.sort_unstable();
        let mut best: Option<((usize, u32), (u16, u16), u16)> = None;
        for (i, &x) in avail.iter().enumerate() {
            for &y in &avail[i + 1..] {
                let z = x | y;
                if z == x || z == y || pool.contains(&z) {
                    continue;
                }
                let count = unmet.iter().filter(|&&t| z & !t == 0).count();
                if count == 0 {
                    continue;
                }
                // Strict improvement keeps the first (smallest) pair on ties.
                let score = (count, z.count_ones());
                if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
                    best = Some((score, (x, y), z));
                }
            }
        }
        let (_, (x, y), z) = best.expect("an unmet equation always admits a growing step");
        pool.push(z);
        steps.push((x, y, z));
    }
    (steps.len() as u32, masks_to_schedule(&steps))
}

/// Renders a schedule as one assignment per line (`u1 = a + b`).
pub fn format_schedule(inst: &OcseInstance, sched: &Schedule) -> String {
    let name = |op: &StepOperand| match *op {
        StepOperand::Var(v) => inst.vars[v].clone(),
        StepOperand::Step(j) => format!("u{}", j + 1),
    };
    let mut out = String::new();
    for (i, (s, t)) in sched.steps.iter().enumerate() {
        out.push_str(&format!("u{} = {} + {}\n", i + 1, name(s), name(t)));
    }
    out
}

/// Disjoint-union ensemble instance: same data, but a valid step sequence
/// must union *disjoint* sets.
#[derive(Clone, Debug, PartialEq)]
pub struct EcInstance {
    pub vars: Vec<String>,
    pub subsets: Vec<Vec<String>>,
    pub bound: u32,
}

/// One input equation per subset, identical ground set and bound. Singleton
/// subsets normalize away (they are ground elements, not union results).
pub fn reduce_ec_to_ocse(ec: &EcInstance) -> Result<OcseInstance, OcseError> {
    OcseInstance::new(ec.vars.clone(), &ec.subsets, ec.bound)
}

/// Maps a schedule back to a disjoint-union sequence of the same length:
/// `Some` iff every step's operands are disjoint sets (the direction the
/// reduction's correspondence needs). Reference validation errors propagate.
pub fn schedule_as_disjoint_unions(
    inst: &OcseInstance,
    sched: &Schedule,
) -> Result<Option<Schedule>, OcseError> {
    let sets = schedule_sets(inst, sched)?;
    for (s, t) in &sched.steps {
        let mask = |op: &StepOperand| match *op {
            StepOperand::Var(v) => 1u16 << v,
            StepOperand::Step(j) => sets[j],
        };
        if mask(s) & mask(t) != 0 {
            return Ok(None);
        }
    }
    Ok(Some(sched.clone()))
}

/// Exact minimum for the disjoint-union variant, by the same deepening
/// search restricted to disjoint operand pairs. Cross-checks the reduction.
pub fn solve_ec_exact(ec: &EcInstance) -> Result<ExactOutcome, OcseError> {
    let inst = reduce_ec_to_ocse(ec)?;
    if inst.vars.len() > MAX_EXACT_VARS {
        return Err(OcseError::InstanceTooLarge {
            detail: format!("{} variables (limit {})", inst.vars.len(), MAX_EXACT_VARS),
        });
    }
    let (omega, masks) = min_step_sequence(inst.vars.len(), &inst.equations, true);
    if omega > inst.bound {
        return Ok(ExactOutcome::Infeasible { bound: inst.bound, minimal: omega });
    }
    Ok(ExactOutcome::Solved { omega, schedule: masks_to_schedule(&masks) })
}

/// Iterative-deepening search for the shortest step sequence producing every
/// target mask. Any reachable pool of intermediate sets can be built in
/// ascending numeric order (a union is strictly larger than its operands),
/// so the search only extends pools upward, which also keeps the memo key
/// canonical.
fn min_step_sequence(nvars: usize, targets: &[u16], disjoint: bool) -> (u32, Vec<(u16, u16, u16)>) {
    let distinct: Vec<u16> = {
        let set: BTreeSet<u16> = targets.iter().copied().collect();
        set.into_iter().collect()
    };
    if distinct.is_empty() {
        return (0, Vec::new());
    }
    let upper: u32 = distinct.iter().map(|t| t.count_ones() - 1).sum();
    let lower = distinct.len() as u32;
    let singles: Vec<u16> = (0..nvars).map(|i| 1 << i).collect();
    for limit in lower..=upper {
        let mut search = Search {
            targets: &distinct,
            singles: &singles,
            disjoint,
            failed: HashMap::new(),
        };
        let mut pool = Vec::new();
        let mut steps = Vec::new();
        if search.dfs(&mut pool, 0, limit, &mut steps) {
            return (limit, steps);
        }
    }
    unreachable!("chaining each target's variables always fits the upper bound");
}

struct Search<'a> {
    targets: &'a [u16],
    singles: &'a [u16],
    disjoint: bool,
    /// Pool → largest remaining budget that still failed from that pool.
    failed: HashMap<Vec<u16>, u32>,
}

impl Search<'_> {
    fn dfs(
        &mut self,
        pool: &mut Vec<u16>,
        last: u16,
        remaining: u32,
        steps: &mut Vec<(u16, u16, u16)>,
    ) -> bool {
        let unmet = self.targets.iter().filter(|t| !pool.contains(t)).count() as u32;
        if unmet == 0 {
            return true;
        }
        // Each step adds one set, and every distinct unmet target needs one.
        if unmet > remaining {
            return false;
        }
        if let Some(&r) = self.failed.get(pool.as_slice()) {
            if r >= remaining {
                return false;
            }
        }
        // Useful new sets: strict unions of two available sets, larger than
        // the last one built (canonical order), inside some target.
        let mut cands: BTreeMap<u16, (u16, u16)> = BTreeMap::new();
        let avail: Vec<u16> =
            self.singles.iter().copied().chain(pool.iter().copied()).collect();
        for (i, &x) in avail.iter().enumerate() {
            for &y in &avail[i + 1..] {
                if self.disjoint && x & y != 0 {
                    continue;
                }
                let z = x | y;
                if z == x || z == y || z <= last {
                    continue;
                }
                if !self.targets.iter().any(|&t| z & !t == 0) {
                    continue;
                }
                cands
                    .entry(z)
                    .and_modify(|p| {
                        if (x, y) < *p {
                            *p = (x, y);
                        }
                    })
                    .or_insert((x, y));
            }
        }
        for (z, (x, y)) in cands {
            pool.push(z);
            steps.push((x, y, z));
            if self.dfs(pool, z, remaining - 1, steps) {
                return true;
            }
            steps.pop();
            pool.pop();
        }
        let entry = self.failed.entry(pool.clone()).or_insert(0);
        *entry = (*entry).max(remaining);
        false
    }
}

/// Rebuilds operand references from raw mask steps: singleton masks are
/// variables, larger masks are the first earlier step that produced them.
fn masks_to_schedule(steps: &[(u16, u16, u16)]) -> Schedule {
    let operand = |m: u16, upto: usize| -> StepOperand {
        if m.count_ones() == 1 {
            StepOperand::Var(m.trailing_zeros() as usize)
        } else {
            let j = steps[..upto]
                .iter()
                .position(|s| s.2 == m)
                .expect("operand set was built by an earlier step");
            StepOperand::Step(j)
        }
    };
    Schedule {
        steps: steps
            .iter()
            .enumerate()
            .map(|(i, &(x, y, _))| (operand(x, i), operand(y, i)))
            .collect(),
    }
}

/// Parses the text instance format:
///
/// ```text
/// vars: a1 a2 a3 a4
/// eq: a1 a2
/// eq: a1 a2 a3
/// omega: 4
/// ```
pub fn parse_instance(text: &str) -> Result<OcseInstance, OcseError> {
    let mut vars: Option<Vec<String>> = None;
    let mut eqs: Vec<Vec<String>> = Vec::new();
    let mut bound: Option<u32> = None;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("vars:") {
            if vars.is_some() {
                return Err(OcseError::ParseError {
                    detail: format!("line {}: repeated `vars:` line", no + 1),
                });
            }
            vars = Some(rest.split_whitespace().map(String::from).collect());
        } else if let Some(rest) = line.strip_prefix("eq:") {
            eqs.push(rest.split_whitespace().map(String::from).collect());
        } else if let Some(rest) = line.strip_prefix("omega:") {
            if bound.is_some() {
                return Err(OcseError::ParseError {
                    detail: format!("line {}: repeated `omega:` line", no + 1),
                });
            }
            bound = Some(rest.trim().parse().map_err(|_| OcseError::ParseError {
                detail: format!("line {}: `omega:` needs a non-negative integer", no + 1),
            })?);
        } else {
            return Err(OcseError::ParseError {
                detail: format!("line {}: expected `vars:`, `eq:` or `omega:`", no + 1),
            });
        }
    }
    let vars = vars.ok_or(OcseError::ParseError { detail: "missing `vars:` line".into() })?;
    let bound = bound.ok_or(OcseError::ParseError { detail: "missing `omega:` line".into() })?;
    OcseInstance::new(vars, &eqs, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Three overlapping sums over four variables; the canonical worked
    /// instance for this problem.
    fn worked_instance(bound: u32) -> OcseInstance {
        OcseInstance::new(
            vec!["a1".into(), "a2".into(), "a3".into(), "a4".into()],
            &[
                vec!["a1".into(), "a2".into()],
                vec!["a1".into(), "a2".into(), "a3".into()],
                vec!["a2".into(), "a3".into(), "a4".into()],
            ],
            bound,
        )
        .unwrap()
    }

    #[test]
    fn known_four_step_schedule_verifies() {
        let inst = worked_instance(4);
        let sched = Schedule {
            steps: vec![
                (StepOperand::Var(0), StepOperand::Var(1)), // u1 = a1 + a2
                (StepOperand::Var(1), StepOperand::Var(2)), // u2 = a2 + a3
                (StepOperand::Var(0), StepOperand::Step(1)), // u3 = a1 + u2
                (StepOperand::Var(3), StepOperand::Step(1)), // u4 = a4 + u2
            ],
        };
        assert_eq!(verify_schedule(&inst, &sched), Ok(true));
    }

    #[test]
    fn truncated_schedule_fails_verification() {
        let inst = worked_instance(4);
        let sched = Schedule {
            steps: vec![
                (StepOperand::Var(0), StepOperand::Var(1)),
                (StepOperand::Var(1), StepOperand::Var(2)),
                (StepOperand::Var(0), StepOperand::Step(1)),
            ],
        };
        assert_eq!(verify_schedule(&inst, &sched), Ok(false));
    }

    #[test]
    fn empty_instance_accepts_empty_schedule() {
        let inst = OcseInstance::new(Vec::new(), &[], 1).unwrap();
        assert_eq!(verify_schedule(&inst, &Schedule::default()), Ok(true));
    }

    #[test]
    fn forward_reference_is_malformed() {
        let inst = worked_instance(4);
        let sched = Schedule {
            steps: vec![(StepOperand::Var(0), StepOperand::Step(0))],
        };
        assert!(matches!(
            verify_schedule(&inst, &sched),
            Err(OcseError::MalformedSchedule { .. })
        ));
    }

    #[test]
    fn exact_minimum_is_four_steps() {
        let inst = worked_instance(4);
        match solve_exact(&inst).unwrap() {
            ExactOutcome::Solved { omega, schedule } => {
                assert_eq!(omega, 4);
                assert_eq!(verify_schedule(&inst, &schedule), Ok(true));
            }
            other => panic!("expected a solution, got {other:?}"),
        }
    }

    #[test]
    fn three_step_bound_is_infeasible() {
        let inst = worked_instance(3);
        assert_eq!(
            solve_exact(&inst).unwrap(),
            ExactOutcome::Infeasible { bound: 3, minimal: 4 }
        );
    }

    #[test]
    fn single_equation_needs_terms_minus_one_steps() {
        let names: Vec<String> = (1..=5).map(|i| format!("a{i}")).collect();
        let inst = OcseInstance::new(names.clone(), &[names], 10).unwrap();
        match solve_exact(&inst).unwrap() {
            ExactOutcome::Solved { omega, .. } => assert_eq!(omega, 4),
            other => panic!("expected a solution, got {other:?}"),
        }
    }

    #[test]
    fn greedy_solves_the_worked_instance_in_four() {
        let inst = worked_instance(4);
        let (omega, sched) = solve_greedy(&inst);
        assert_eq!(omega, 4);
        assert_eq!(verify_schedule(&inst, &sched), Ok(true));
    }

    #[test]
    fn greedy_handles_disjoint_equations() {
        let inst = OcseInstance::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            &[vec!["a".into(), "b".into()], vec!["c".into(), "d".into()]],
            2,
        )
        .unwrap();
        let (omega, sched) = solve_greedy(&inst);
        assert_eq!(omega, 2);
        assert_eq!(verify_schedule(&inst, &sched), Ok(true));
    }

    #[test]
    fn singleton_equations_normalize_away() {
        let inst = OcseInstance::new(
            vec!["a".into(), "b".into()],
            &[vec!["a".into()]],
            1,
        )
        .unwrap();
        assert!(inst.equation_masks().is_empty());
        match solve_exact(&inst).unwrap() {
            ExactOutcome::Solved { omega, .. } => assert_eq!(omega, 0),
            other => panic!("expected trivial solution, got {other:?}"),
        }
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(
            OcseInstance::new(vec!["a".into()], &[vec!["a".into(), "a".into()]], 1),
            Err(OcseError::DuplicateVariable { .. })
        ));
        assert!(matches!(
            OcseInstance::new(vec!["a".into()], &[vec!["b".into()]], 1),
            Err(OcseError::UnknownVariable { .. })
        ));
        assert!(matches!(
            OcseInstance::new(vec!["a".into()], &[vec![]], 1),
            Err(OcseError::EmptyEquation { .. })
        ));
        assert!(matches!(
            OcseInstance::new(vec!["a".into()], &[], 0),
            Err(OcseError::BadBound)
        ));
    }

    #[test]
    fn exact_guard_rejects_large_instances() {
        let names: Vec<String> = (0..11).map(|i| format!("v{i}")).collect();
        let inst = OcseInstance::new(names.clone(), &[names[..2].to_vec()], 5).unwrap();
        assert!(matches!(
            solve_exact(&inst),
            Err(OcseError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn reduction_maps_the_worked_pair() {
        let ec = EcInstance {
            vars: vec!["a1".into(), "a2".into(), "a3".into(), "a4".into()],
            subsets: vec![
                vec!["a1".into(), "a2".into()],
                vec!["a1".into(), "a2".into(), "a3".into()],
                vec!["a2".into(), "a3".into(), "a4".into()],
            ],
            bound: 4,
        };
        let inst = reduce_ec_to_ocse(&ec).unwrap();
        assert_eq!(inst, worked_instance(4));
        match solve_ec_exact(&ec).unwrap() {
            ExactOutcome::Solved { omega, schedule } => {
                assert_eq!(omega, 4);
                // A disjoint-union sequence is also a valid shared-term one.
                assert_eq!(verify_schedule(&inst, &schedule), Ok(true));
                assert!(schedule_as_disjoint_unions(&inst, &schedule)
                    .unwrap()
                    .is_some());
            }
            other => panic!("expected a solution, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_schedule_does_not_map_to_disjoint_unions() {
        let inst = worked_instance(4);
        let sched = Schedule {
            steps: vec![
                (StepOperand::Var(0), StepOperand::Var(1)), // {a1,a2}
                (StepOperand::Var(1), StepOperand::Var(2)), // {a2,a3}
                (StepOperand::Step(0), StepOperand::Step(1)), // overlap on a2
                (StepOperand::Var(3), StepOperand::Step(1)),
            ],
        };
        assert_eq!(verify_schedule(&inst, &sched), Ok(true));
        assert_eq!(schedule_as_disjoint_unions(&inst, &sched), Ok(None));
    }

    #[test]
    fn parses_and_solves_text_instances() {
        let inst = parse_instance(
            "# shared-term sums\n\
             vars: a1 a2 a3 a4\n\
             eq: a1 a2\n\
             eq: a1 a2 a3\n\
             eq: a2 a3 a4\n\
             omega: 4\n",
        )
        .unwrap();
        assert_eq!(inst, worked_instance(4));
        assert!(parse_instance("eq: a b\nomega: 2").is_err());
        assert!(parse_instance("vars: a b").is_err());
        assert!(parse_instance("vars: a\nwhat: 3").is_err());
    }

    #[test]
    fn schedule_formatting_names_variables_and_steps() {
        let inst = worked_instance(4);
        let sched = Schedule {
            steps: vec![
                (StepOperand::Var(1), StepOperand::Var(2)),
                (StepOperand::Var(0), StepOperand::Step(0)),
            ],
        };
        assert_eq!(format_schedule(&inst, &sched), "u1 = a2 + a3\nu2 = a1 + u1\n");
    }

    /// Random small instances: strategy yields (variable count, equations).
    fn small_instances() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
        (2usize..=6).prop_flat_map(|nvars| {
            let eq = proptest::collection::vec(0..nvars, 2..=4);
            (Just(nvars), proptest::collection::vec(eq, 1..=3))
        })
    }

    fn build(nvars: usize, raw: &[Vec<usize>], bound: u32) -> OcseInstance {
        let vars: Vec<String> = (0..nvars).map(|i| format!("v{i}")).collect();
        let eqs: Vec<Vec<String>> = raw
            .iter()
            .map(|eq| {
                let dedup: BTreeSet<usize> = eq.iter().copied().collect();
                dedup.into_iter().map(|i| format!("v{i}")).collect()
            })
            .collect();
        OcseInstance::new(vars, &eqs, bound).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn greedy_never_beats_exact_and_both_verify((nvars, raw) in small_instances()) {
            let inst = build(nvars, &raw, 32);
            let (greedy_omega, greedy_sched) = solve_greedy(&inst);
            prop_assert_eq!(verify_schedule(&inst, &greedy_sched), Ok(true));
            match solve_exact(&inst).unwrap() {
                ExactOutcome::Solved { omega, schedule } => {
                    prop_assert_eq!(verify_schedule(&inst, &schedule), Ok(true));
                    prop_assert!(omega <= greedy_omega);
                }
                ExactOutcome::Infeasible { .. } => prop_assert!(false, "bound 32 is generous"),
            }
        }

        #[test]
        fn reduction_preserves_the_exact_optimum((nvars, raw) in small_instances()) {
            let vars: Vec<String> = (0..nvars).map(|i| format!("v{i}")).collect();
            let subsets: Vec<Vec<String>> = raw
                .iter()
                .map(|eq| {
                    let dedup: BTreeSet<usize> = eq.iter().copied().collect();
                    dedup.into_iter().map(|i| format!("v{i}")).collect()
                })
                .collect();
            let ec = EcInstance { vars, subsets, bound: 32 };
            let shared = solve_exact(&reduce_ec_to_ocse(&ec).unwrap()).unwrap();
            let disjoint = solve_ec_exact(&ec).unwrap();
            match (shared, disjoint) {
                (
                    ExactOutcome::Solved { omega: a, .. },
                    ExactOutcome::Solved { omega: b, .. },
                ) => prop_assert_eq!(a, b),
                other => prop_assert!(false, "unexpected outcomes: {:?}", other),
            }
        }

        #[test]
        fn corrupted_schedules_never_panic(
            (nvars, raw) in small_instances(),
            tweak_step in 0usize..8,
            tweak_val in 0usize..12,
        ) {
            let inst = build(nvars, &raw, 32);
            let (_, mut sched) = solve_greedy(&inst);
            if !sched.steps.is_empty() {
                let i = tweak_step % sched.steps.len();
                sched.steps[i].0 = if tweak_val % 2 == 0 {
                    StepOperand::Var(tweak_val)
                } else {
                    StepOperand::Step(tweak_val)
                };
            }
            // Must classify cleanly: valid, invalid, or malformed.
            let _ = verify_schedule(&inst, &sched);
        }
    }
}
