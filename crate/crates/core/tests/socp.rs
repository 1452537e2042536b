mod common;

use common::random_program;
use lem::socp::{check_kkt, dual_sensitivity_probe, solve_socp, ProgramBuilder, SolveStatus};
use proptest::prelude::*;

#[test]
fn norm_example() {
    let mut b = ProgramBuilder::new();
    let t = b.soc(3);
    b.add_cost(t, 1.0);
    b.eq(&[(t + 1, 1.0)], 3.0);
    b.eq(&[(t + 2, 1.0)], 4.0);
    let sol = solve_socp(&b.build(), 1e-8).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.x[t] - 5.0).abs() < 1e-6);
    assert!((sol.obj - 5.0).abs() < 1e-6);
}

#[test]
fn square_system_is_solved_exactly() {
    let mut b = ProgramBuilder::new();
    let x = b.free();
    let y = b.free();
    b.add_cost(x, 3.0);
    b.add_cost(y, -1.0);
    b.eq(&[(x, 2.0), (y, 1.0)], 3.0);
    b.eq(&[(x, 1.0), (y, -1.0)], 0.0);
    let sol = solve_socp(&b.build(), 1e-8).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.x[0] - 1.0).abs() < 1e-8 && (sol.x[1] - 1.0).abs() < 1e-8);
}

#[test]
fn two_variable_lp() {
    let mut b = ProgramBuilder::new();
    let x1 = b.nonneg();
    let x2 = b.nonneg();
    b.add_cost(x1, 1.0);
    b.add_cost(x2, 1.0);
    b.eq(&[(x1, 1.0), (x2, 1.0)], 1.0);
    let sol = solve_socp(&b.build(), 1e-8).unwrap();
    assert!((sol.obj - 1.0).abs() < 1e-7);
    assert!((sol.y[0] - 1.0).abs() < 1e-6);
}

#[test]
fn inequality_free_probe() {
    // min ½x² + ½y² s.t. x + 2y = 3
    let mut b = ProgramBuilder::new();
    let x = b.free();
    let y = b.free();
    b.add_quad(x, 1.0);
    b.add_quad(y, 1.0);
    b.eq(&[(x, 1.0), (y, 2.0)], 3.0);
    let p = b.build();
    let sol = solve_socp(&p, 1e-8).unwrap();
    let probe = dual_sensitivity_probe(&p, &sol, 0, 1e-5).unwrap();
    assert!(probe.conclusive);
    assert!(probe.relative_error() < 1e-3, "{probe:?}");
    assert!((sol.y[0] - 0.6).abs() < 1e-6);
}

#[test]
fn infeasible_soc() {
    // t ≥ ‖u‖ with t = 1, u = 2
    let mut b = ProgramBuilder::new();
    let t = b.soc(2);
    b.eq(&[(t, 1.0)], 1.0);
    b.eq(&[(t + 1, 1.0)], 2.0);
    let sol = solve_socp(&b.build(), 1e-8).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn inconsistent_duplicate_rows_do_not_crash() {
    let mut b = ProgramBuilder::new();
    let x = b.free();
    b.eq(&[(x, 1.0)], 1.0);
    b.eq(&[(x, 1.0)], 2.0);
    let sol = solve_socp(&b.build(), 1e-8).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn seeded_programs_converge() {
    for seed in 0..200 {
        let p = random_program(seed, seed % 2 == 0);
        let sol = solve_socp(&p, 1e-8).unwrap();
        assert_eq!(
            sol.status,
            SolveStatus::Optimal,
            "seed {seed}: {:?}",
            sol.residuals
        );
        let r = check_kkt(&p, &sol);
        assert!(r.max() <= 1e-7, "seed {seed}: {r:?}");
        assert!(
            (sol.obj - sol.dual_obj).abs() <= 10.0 * 1e-8 * (1.0 + sol.obj.abs()),
            "seed {seed}: {} vs {}",
            sol.obj,
            sol.dual_obj
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn probe_agrees_with_duals(seed in 0u64..10_000, row in 0usize..8) {
        let p = random_program(seed, seed % 3 == 0);
        let sol = solve_socp(&p, 1e-9).unwrap();
        prop_assume!(sol.is_optimal());
        let row = row % p.n_eq();
        let probe = dual_sensitivity_probe(&p, &sol, row, 1e-5).unwrap();
        if probe.conclusive && probe.dual.abs().max(probe.estimate.abs()) > 1e-6 {
            prop_assert!(probe.relative_error() <= 1e-3, "{:?}", probe);
        }
    }

    #[test]
    fn scaling_objective_scales_duals(seed in 0u64..10_000, alpha in 0.1f64..50.0) {
        let p = random_program(seed, true);
        // duals on degenerate rows are only resolved to about sqrt(gap)
        let s1 = solve_socp(&p, 1e-11).unwrap();
        let s2 = solve_socp(&p.scaled_objective(alpha), 1e-11).unwrap();
        prop_assume!(s1.is_optimal() && s2.is_optimal());
        // the argmin is unique when q > 0 on every coordinate; compare objective and duals instead
        prop_assert!((s2.obj - alpha * s1.obj).abs() <= 1e-6 * (1.0 + s2.obj.abs()));
        for (a, b) in s1.y.iter().zip(&s2.y) {
            prop_assert!((b - alpha * a).abs() <= 1e-4 * (1.0 + b.abs()), "{} vs {}", b, alpha * a);
        }
    }
}
