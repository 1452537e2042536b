mod common;

use common::{enumerate, gated_instance};
use lem::miqp::{relax_and_repair, solve_mbp, MixedBinaryProgram, RepairHints};
use lem::socp::{solve_socp, ProgramBuilder, SolveStatus};

#[test]
fn no_binaries_matches_relaxation() {
    let mut b = ProgramBuilder::new();
    let t = b.soc(3);
    b.add_cost(t, 1.0);
    b.eq(&[(t + 1, 1.0)], 3.0);
    b.eq(&[(t + 2, 1.0)], 4.0);
    let relaxation = b.build();
    let direct = solve_socp(&relaxation, 1e-9).unwrap();
    let prob = MixedBinaryProgram {
        relaxation,
        binary_indices: vec![],
        hints: RepairHints::default(),
    };
    let r = solve_mbp(&prob, 1e-6, 10).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.obj_incumbent - direct.obj).abs() < 1e-9);
}

#[test]
fn four_separable_binaries() {
    // min Σ w_i x_i with w = (1, −2, 3, −0.5): optimum sets the negative weights
    let w = [1.0, -2.0, 3.0, -0.5];
    let mut b = ProgramBuilder::new();
    let xs: Vec<usize> = w.iter().map(|_| b.nonneg()).collect();
    for (&x, &wi) in xs.iter().zip(&w) {
        b.add_cost(x, wi);
        b.le(&[(x, 1.0)], 1.0);
    }
    let prob = MixedBinaryProgram {
        relaxation: b.build(),
        binary_indices: xs.clone(),
        hints: RepairHints::default(),
    };
    let r = solve_mbp(&prob, 1e-9, 1000).unwrap();
    let brute = (0..16u32)
        .map(|m| {
            (0..4)
                .map(|i| if m >> i & 1 == 1 { w[i] } else { 0.0 })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    assert!((r.obj_incumbent - brute).abs() < 1e-7);
    let x = r.x_incumbent.unwrap();
    assert_eq!(
        xs.iter().map(|&i| x[i].round()).collect::<Vec<_>>(),
        vec![0.0, 1.0, 0.0, 1.0]
    );
}

#[test]
fn branch_and_bound_matches_enumeration() {
    for seed in 0..30 {
        let n = 2 + (seed as usize % 6) * 2;
        let prob = gated_instance(seed, n);
        let brute = enumerate(&prob).expect("instance feasible");
        let r = solve_mbp(&prob, 1e-9, 50_000).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal, "seed {seed}");
        assert!(
            (r.obj_incumbent - brute).abs() <= 1e-6 * (1.0 + brute.abs()),
            "seed {seed}: bnb {} brute {brute}",
            r.obj_incumbent
        );
        assert!(r.best_bound <= r.obj_incumbent + 1e-9);
        let x = r.x_incumbent.unwrap();
        for &b in &prob.binary_indices {
            assert!(x[b].min(1.0 - x[b]).abs() <= 1e-6);
        }
    }
}

#[test]
fn repair_never_beats_branch_and_bound() {
    for seed in 100..120 {
        let prob = gated_instance(seed, 8);
        let bnb = solve_mbp(&prob, 1e-9, 50_000).unwrap();
        let rep = relax_and_repair(&prob).unwrap().expect("repair point");
        assert!(rep.obj >= bnb.obj_incumbent - 1e-7, "seed {seed}");
        assert!(rep.relaxation_obj <= rep.obj + 1e-7);
    }
}

#[test]
fn integral_relaxation_is_kept() {
    let mut b = ProgramBuilder::new();
    let x = b.nonneg();
    b.add_cost(x, -1.0);
    b.le(&[(x, 1.0)], 1.0);
    let prob = MixedBinaryProgram {
        relaxation: b.build(),
        binary_indices: vec![x],
        hints: RepairHints::default(),
    };
    let relax = solve_socp(&prob.relaxation, 1e-9).unwrap();
    let rep = relax_and_repair(&prob).unwrap().unwrap();
    assert_eq!(rep.x[x], 1.0);
    assert!((rep.obj - relax.obj).abs() < 1e-7);
}

#[test]
fn node_limit_reports_honest_gap() {
    let prob = gated_instance(7, 12);
    let r = solve_mbp(&prob, 1e-12, 3).unwrap();
    assert!(r.nodes_explored <= 3);
    if r.status == SolveStatus::IterLimit {
        assert!(r.gap >= 0.0);
        assert!(r.best_bound <= r.obj_incumbent);
    }
}
