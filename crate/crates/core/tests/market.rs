mod common;

use common::{chain, fixture, passive, scenario};
use lem::dso::{Dso, DsoInput, DsoSettings};
use lem::market::{
    audit_privacy, check_stop, compute_costs, prosumer_input, run_clearing, run_clearing_with,
    AgentMessage, ClearingResult, ClearingStatus, Envelope, RunOptions, SolveOrder,
};
use lem::prosumer::solve_subproblem_iii;
use std::sync::OnceLock;

fn logged() -> RunOptions {
    RunOptions {
        log_messages: true,
        ..Default::default()
    }
}

/// The bundled six-bus run, shared by the tests that only read it.
fn feeder6() -> &'static ClearingResult {
    static RUN: OnceLock<ClearingResult> = OnceLock::new();
    RUN.get_or_init(|| run_clearing_with(&fixture("feeder6"), &logged()).unwrap())
}

#[test]
fn idle_market_settles_immediately() {
    let scn = scenario(
        chain(2, 0.01, 0.02, 1.0),
        vec![passive("a", 2, vec![0.0; 3])],
        vec![0.0; 3],
    );
    let res = run_clearing(&scn).unwrap();
    assert_eq!(res.status, ClearingStatus::Converged);
    assert_eq!(res.outer_iterations, 1);
    let zero = |v: &[f64]| v.iter().all(|x| x.abs() < 1e-8);
    assert!(zero(&res.schedules[0].p_net));
    assert!(zero(&res.p_tilde[0]) && zero(&res.lambda_p[0]) && zero(&res.lambda_lem[0]));
    assert!(
        zero(&res.p_ug) && zero(&res.p_loss),
        "{:?} {:?}",
        res.p_ug,
        res.p_loss
    );
}

#[test]
fn feeder6_converges_within_pinned_counts() {
    let res = feeder6();
    assert_eq!(res.status, ClearingStatus::Converged);
    assert!(res.outer_iterations <= 20, "{}", res.outer_iterations);
    assert!(
        res.max_inner_iterations <= 10,
        "{}",
        res.max_inner_iterations
    );
    assert!(res.trace.stops_consistent());
}

#[test]
fn replay_is_bit_identical_across_runs_and_orders() {
    let scn = fixture("feeder6");
    let base = feeder6();
    for order in [
        SolveOrder::Forward,
        SolveOrder::Reverse,
        SolveOrder::Shuffled(3),
        SolveOrder::Shuffled(11),
    ] {
        let opts = RunOptions { order, ..logged() };
        let res = run_clearing_with(&scn, &opts).unwrap();
        assert_eq!(res.trace, base.trace, "{order:?}");
        assert_eq!(res.messages, base.messages, "{order:?}");
        assert_eq!(res.schedules, base.schedules);
        assert_eq!(res.dlmp, base.dlmp);
    }
}

#[test]
fn stop_test_examples() {
    assert!(check_stop(&[0.0, 0.0], 1e-12));
    assert!(!check_stop(&[1e-5, 1e-3], 1e-4));
    assert!(check_stop(&[1e-4, -1e-4], 1e-4));
    assert!(check_stop(&[], 1e-4));
}

#[test]
fn standard_run_passes_the_audit() {
    let res = feeder6();
    assert!(!res.messages.is_empty());
    let rep = audit_privacy(&res.messages);
    assert!(rep.passed, "{:?}", rep.violations);
    assert_eq!(rep.messages, res.messages.len());
    assert!(rep.warning.is_none());
    for line in &res.messages {
        let _: Envelope = serde_json::from_str(line).unwrap();
    }
}

#[test]
fn leaked_state_fails_the_audit() {
    let mut log = feeder6().messages.clone();
    let mut v: serde_json::Value = serde_json::from_str(&log[0]).unwrap();
    v["body"]["soc"] = serde_json::json!([1.0, 2.0]);
    log[0] = v.to_string();
    let rep = audit_privacy(&log);
    assert!(!rep.passed);
    assert!(
        rep.violations.iter().any(|m| m.contains("`soc`")),
        "{:?}",
        rep.violations
    );

    let mut log = feeder6().messages.clone();
    let mut v: serde_json::Value = serde_json::from_str(&log[1]).unwrap();
    v["throughput_cost"] = serde_json::json!(0.2);
    log[1] = v.to_string();
    let rep = audit_privacy(&log);
    assert!(rep
        .violations
        .iter()
        .any(|m| m.contains("`throughput_cost`")));
}

#[test]
fn empty_log_passes_with_warning() {
    let rep = audit_privacy(&[]);
    assert!(rep.passed);
    assert!(rep.warning.is_some());
}

#[test]
fn unknown_keys_are_not_deserializable() {
    let line = r#"{"type":"ProsumerToLmo","p_net":[0.1],"soc":[3.0]}"#;
    assert!(serde_json::from_str::<AgentMessage>(line).is_err());
}

#[test]
fn exchange_is_rebuilt_from_the_balance() {
    let res = feeder6();
    let bg = res.scenario.background_total();
    for t in 0..res.scenario.horizon {
        let rebuilt = res.p_tilde.iter().map(|r| r[t]).sum::<f64>() + bg[t] + res.p_loss_tilde[t];
        assert_eq!(res.p_ug[t], rebuilt);
    }
}

#[test]
fn converged_copies_agree_within_the_stop_bound() {
    let res = feeder6();
    let cfg = &res.scenario.admm;
    let mut worst: f64 = 0.0;
    for (pt, s) in res.p_tilde.iter().zip(&res.schedules) {
        for (a, b) in pt.iter().zip(&s.p_net) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= cfg.eps1 / cfg.rho + 1e-9, "{worst}");
    let loss = res
        .p_loss_tilde
        .iter()
        .zip(&res.p_loss)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(loss <= cfg.eps2 / cfg.rho_prime + 1e-9, "{loss}");
}

#[test]
fn costs_match_primitives() {
    let res = feeder6();
    let again = compute_costs(&res.scenario, &res.p_ug, &res.p_loss, &res.schedules);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + a.abs());
    assert!(close(again.lmo, res.costs.lmo) && close(again.dso, res.costs.dso));
    let scn = &res.scenario;
    let dso: f64 = (0..scn.horizon)
        .map(|t| scn.profiles.loss_cost[t] * scn.dt * res.p_loss[t])
        .sum();
    assert!(close(dso, res.costs.dso));
    for (s, price) in res.schedules.iter().zip(&res.lambda_lem) {
        let energy: f64 = (0..scn.horizon)
            .map(|t| price[t] * scn.dt * s.p_net[t])
            .sum();
        assert!(close(energy, s.cost_energy));
    }
}

#[test]
fn recorded_messages_replay() {
    let res = feeder6();
    let scn = &res.scenario;
    let dso = Dso::new(
        &scn.network,
        DsoSettings {
            dt: scn.dt,
            loss_cost: scn.profiles.loss_cost.clone(),
            rho_prime: scn.admm.rho_prime,
        },
    )
    .unwrap();
    let envs: Vec<Envelope> = res
        .messages
        .iter()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let q = scn.reactive_forecast();
    let mut checked = (0, 0);
    for (i, env) in envs.iter().enumerate() {
        match &env.body {
            AgentMessage::LmoToDso {
                p_net_node,
                p_loss_tilde,
                lambda_loss,
            } => {
                let out = dso
                    .solve(&DsoInput {
                        p_net_node: p_net_node.clone(),
                        q_net_node: q.clone(),
                        p_loss_tilde: p_loss_tilde.clone(),
                        lambda_loss: lambda_loss.clone(),
                    })
                    .unwrap();
                let AgentMessage::DsoToLmo { p_loss, dlmp } = &envs[i + 1].body else {
                    panic!("DSO reply expected after seq {}", env.seq)
                };
                let diff = |a: &[f64], b: &[f64]| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y).abs())
                        .fold(0.0, f64::max)
                };
                assert!(diff(&out.p_loss, p_loss) <= 1e-9);
                for (a, b) in out.dlmp.iter().zip(dlmp) {
                    assert!(diff(a, b) <= 1e-9);
                }
                checked.0 += 1;
            }
            AgentMessage::LmoToProsumer { .. } if env.outer < res.outer_iterations => {
                let a = scn.prosumers.iter().position(|p| p.id == env.to).unwrap();
                let input = prosumer_input(env.body.clone(), scn.admm.rho);
                let sched = solve_subproblem_iii(
                    &scn.prosumers[a],
                    &input,
                    scn.dt,
                    scn.admm.prosumer_solver,
                    scn.admm.mip_gap,
                    scn.admm.node_limit,
                )
                .unwrap();
                let sent = envs
                    .iter()
                    .find(|e| e.outer == env.outer + 1 && e.from == env.to)
                    .map(|e| match &e.body {
                        AgentMessage::ProsumerToLmo { p_net } => p_net.clone(),
                        other => panic!("{other:?}"),
                    })
                    .unwrap();
                for (x, y) in sched.p_net.iter().zip(&sent) {
                    assert!((x - y).abs() <= 1e-9);
                }
                checked.1 += 1;
            }
            _ => {}
        }
    }
    assert!(
        checked.0 >= res.outer_iterations && checked.1 > 0,
        "{checked:?}"
    );
}
