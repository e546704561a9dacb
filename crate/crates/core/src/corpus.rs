//! Bundled example programs: twenty-five small application kernels
//! (estimation, regularized fitting, filtering, randomized solvers) used
//! as the equivalence and pass-hygiene corpus.
//!
//! The sources live under `corpus/` and are compiled in, so the test
//! harness and the command line see the same bytes.

pub struct CorpusEntry {
    pub name: &'static str,
    pub source: &'static str,
}

macro_rules! entry {
    ($name:literal) => {
        CorpusEntry { name: $name, source: include_str!(concat!("../corpus/", $name, ".lamp")) }
    };
}

pub const CORPUS: [CorpusEntry; 25] = [
    entry!("least_squares"),
    entry!("generalized_least_squares"),
    entry!("optimization_step"),
    entry!("optimization_residual_steps"),
    entry!("signal_processing"),
    entry!("triangular_inverse"),
    entry!("ensemble_kalman_state"),
    entry!("ensemble_kalman_increment"),
    entry!("ensemble_kalman_sample"),
    entry!("image_restoration_step"),
    entry!("image_restoration_pseudoinverse"),
    entry!("randomized_inversion_sketch"),
    entry!("randomized_inversion_projector"),
    entry!("randomized_inversion_symmetric"),
    entry!("randomized_inversion_spd"),
    entry!("stochastic_newton_running"),
    entry!("stochastic_newton_first"),
    entry!("tikhonov"),
    entry!("tikhonov_ridge"),
    entry!("generalized_tikhonov"),
    entry!("generalized_tikhonov_residual"),
    entry!("lmmse_direct"),
    entry!("lmmse_information"),
    entry!("lmmse_recursive"),
    entry!("kalman_filter"),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformance::check_equivalence;
    use crate::frontend::{format_program, parse_program};
    use crate::ir::check_program;
    use crate::passes::{compile_with, run_pipeline, PassConfig};

    #[test]
    fn every_program_parses_and_checks() {
        for e in &CORPUS {
            let p = parse_program(e.source).unwrap_or_else(|err| {
                panic!("{}: parse failed: {err}", e.name);
            });
            let p = check_program(p).unwrap_or_else(|err| {
                panic!("{}: check failed: {err}", e.name);
            });
            assert!(!p.stmts.is_empty(), "{}: no statements", e.name);
        }
    }

    #[test]
    fn formatting_round_trips() {
        for e in &CORPUS {
            let p = parse_program(e.source).unwrap();
            let again = parse_program(&format_program(&p)).unwrap_or_else(|err| {
                panic!("{}: reparse failed: {err}", e.name);
            });
            assert_eq!(p, again, "{}: round trip changed the program", e.name);
        }
    }

    #[test]
    fn optimized_plans_match_naive_results() {
        let cfg = PassConfig::default();
        for e in &CORPUS {
            let p = parse_program(e.source).unwrap();
            let optimized = run_pipeline(&p, &cfg);
            let plan = compile_with(&p, &cfg).unwrap_or_else(|err| {
                panic!("{}: lowering failed: {err}", e.name);
            });
            check_equivalence(&p, &optimized, &plan, 1, 1e-8).unwrap_or_else(|err| {
                panic!("{}: {err}", e.name);
            });
        }
    }

    #[test]
    fn optimization_never_raises_the_cost() {
        let cfg = PassConfig::default();
        let none = PassConfig::none();
        for e in &CORPUS {
            let p = parse_program(e.source).unwrap();
            let optimized = compile_with(&p, &cfg).unwrap().total_flops;
            let naive = compile_with(&p, &none).unwrap().total_flops;
            assert!(
                optimized <= naive,
                "{}: optimized {optimized} flops exceeds naive {naive}",
                e.name
            );
        }
    }
}
