//! End-to-end acceptance criteria. Runs without the test harness and prints
//! one PASS/FAIL line per criterion.

mod common;

use common::{enumerate, fixture, gated_instance, random_program, spec};
use lem::dso::{check_tightness, Dso, DsoInput, DsoSettings};
use lem::io::{generate_scenario, GeneratorSpec};
use lem::market::{
    audit_privacy, run_clearing_with, AgentMessage, ClearingResult, ClearingStatus, Envelope,
    RunOptions, SolveOrder,
};
use lem::miqp::solve_mbp;
use lem::model::{Prosumer, PvUnit, Scenario, StorageDevice, StorageKind};
use lem::oracle::{solve_centralized, solve_selfish, Binaries};
use lem::prosumer::{build_subproblem, validate_schedule, ProsumerInput, ProsumerSchedule};
use lem::socp::{dual_sensitivity_probe, solve_socp, SolveStatus};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Run {
    res: ClearingResult,
    elapsed: Duration,
}

fn clear(scn: &Scenario) -> Run {
    let start = Instant::now();
    let res = run_clearing_with(
        scn,
        &RunOptions {
            log_messages: true,
            ..Default::default()
        },
    )
    .expect("clearing runs");
    Run {
        res,
        elapsed: start.elapsed(),
    }
}

struct Corpus {
    feeder6: Run,
    ieee69: Run,
    /// Penetration level and its run on the 69-bus template.
    levels: Vec<(f64, Run)>,
}

impl Corpus {
    fn runs(&self) -> Vec<(String, &ClearingResult)> {
        let mut v = vec![
            ("feeder6".to_string(), &self.feeder6.res),
            ("ieee69".to_string(), &self.ieee69.res),
        ];
        for (p, r) in &self.levels {
            v.push((format!("ieee69@{p}"), &r.res));
        }
        v
    }
}

fn envelopes(res: &ClearingResult) -> Vec<Envelope> {
    res.messages
        .iter()
        .map(|l| serde_json::from_str(l).expect("logged envelope parses"))
        .collect()
}

fn dso_of(scn: &Scenario) -> Dso<'_> {
    Dso::new(
        &scn.network,
        DsoSettings {
            dt: scn.dt,
            loss_cost: scn.profiles.loss_cost.clone(),
            rho_prime: scn.admm.rho_prime,
        },
    )
    .expect("network valid")
}

/// Every DSO input the run sent, rebuilt from its message log.
fn dso_inputs(res: &ClearingResult) -> Vec<DsoInput> {
    let q = res.scenario.reactive_forecast();
    envelopes(res)
        .into_iter()
        .filter_map(|e| match e.body {
            AgentMessage::LmoToDso {
                p_net_node,
                p_loss_tilde,
                lambda_loss,
            } => Some(DsoInput {
                p_net_node,
                q_net_node: q.clone(),
                p_loss_tilde,
                lambda_loss,
            }),
            _ => None,
        })
        .collect()
}

fn convex_equivalence(c: &Corpus) -> Check {
    let start = Instant::now();
    let res = &c.feeder6.res;
    ensure(
        res.scenario.admm.eps1 == 1e-6 && res.scenario.admm.eps2 == 1e-6,
        || "fixture tolerances changed".into(),
    )?;
    let orc =
        solve_centralized(&res.scenario, Binaries::FixedFrom(res)).map_err(|e| e.to_string())?;
    let dist = res.total_objective();
    let gap = (dist - orc.objective).abs() / (1.0 + orc.objective.abs());
    let secs = (c.feeder6.elapsed + start.elapsed()).as_secs_f64();
    ensure(gap <= 1e-3 && secs < 60.0, || {
        format!("gap {gap:.3e}, {secs:.1} s")
    })?;
    Ok(format!(
        "distributed {dist:.6}, centralized {:.6}, gap {gap:.2e}, {secs:.1} s",
        orc.objective
    ))
}

fn convergence_envelope(c: &Corpus) -> Check {
    let r = &c.ieee69.res;
    let secs = c.ieee69.elapsed.as_secs_f64();
    let ok = r.status == ClearingStatus::Converged
        && r.outer_iterations <= 20
        && r.max_inner_iterations <= 10
        && secs < 600.0;
    let detail = format!(
        "{:?} after {} outer, max {} inner, {secs:.1} s",
        r.status, r.outer_iterations, r.max_inner_iterations
    );
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn dlmp_validity(c: &Corpus) -> Check {
    let res = &c.feeder6.res;
    let scn = &res.scenario;
    let dso = dso_of(scn);
    let input = dso_inputs(res).pop().ok_or("no DSO input logged")?;
    let out = dso.solve(&input).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    for bus in 1..scn.network.n_buses() {
        for t in [4, 19] {
            let (bfp, sol) = dso.solve_hour(&input, t).map_err(|e| e.to_string())?;
            let probe =
                dual_sensitivity_probe(&bfp.program, &sol, bfp.layout.active_rows[bus], 1e-5)
                    .map_err(|e| e.to_string())?;
            ensure(probe.conclusive, || format!("bus {bus} hour {t}: kink"))?;
            let reported = out.dlmp[bus][t] * scn.dt;
            ensure(reported == res.dlmp[bus][t] * scn.dt, || {
                format!("bus {bus} hour {t}: replayed price differs")
            })?;
            let err = (probe.estimate - reported).abs() / reported.abs();
            worst = worst.max(err);
            probed += 1;
        }
    }
    ensure(probed == 10 && worst <= 1e-3, || {
        format!("{probed} pairs, worst relative error {worst:.3e}")
    })?;
    Ok(format!("{probed} pairs, worst relative error {worst:.2e}"))
}

fn relaxation_tightness(c: &Corpus) -> Check {
    let mut worst: f64 = 0.0;
    let mut solves = 0;
    for (name, res) in c.runs() {
        let dso = dso_of(&res.scenario);
        for input in dso_inputs(res) {
            let out = dso.solve(&input).map_err(|e| format!("{name}: {e}"))?;
            let rep =
                check_tightness(&res.scenario.network, &out, 1e-6).map_err(|e| e.to_string())?;
            ensure(rep.flagged.is_empty(), || {
                format!("{name}: {:?}", rep.flagged)
            })?;
            worst = worst.max(rep.max_residual);
            solves += 1;
        }
        let rep =
            check_tightness(&res.scenario.network, &res.dso, 1e-6).map_err(|e| e.to_string())?;
        ensure(rep.flagged.is_empty(), || {
            format!("{name} final: {:?}", rep.flagged)
        })?;
    }
    Ok(format!("{solves} DSO optima, max residual {worst:.2e}"))
}

fn directional_welfare(c: &Corpus) -> Check {
    let res = &c.ieee69.res;
    let selfish = solve_selfish(&res.scenario).map_err(|e| e.to_string())?;
    let pct = |s: f64, d: f64| 100.0 * (s - d) / s;
    let detail = format!(
        "LMO {:.4} vs selfish {:.4} (-{:.3}%), loss {:.4} vs selfish {:.4} (-{:.3}%)",
        res.costs.lmo,
        selfish.costs.lmo,
        pct(selfish.costs.lmo, res.costs.lmo),
        res.costs.dso,
        selfish.costs.dso,
        pct(selfish.costs.dso, res.costs.dso)
    );
    ensure(
        res.costs.lmo <= selfish.costs.lmo && res.costs.dso <= selfish.costs.dso,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn penetration_monotonicity(c: &Corpus) -> Check {
    let mut detail = Vec::new();
    for w in c.levels.windows(2) {
        let (a, b) = (&w[0].1.res.costs, &w[1].1.res.costs);
        ensure(b.lmo <= a.lmo && b.dso <= a.dso, || {
            format!(
                "{} -> {}: LMO {:.4} -> {:.4}, loss {:.4} -> {:.4}",
                w[0].0, w[1].0, a.lmo, b.lmo, a.dso, b.dso
            )
        })?;
    }
    for (p, r) in &c.levels {
        detail.push(format!(
            "{p}: LMO {:.3} loss {:.4}",
            r.res.costs.lmo, r.res.costs.dso
        ));
    }
    Ok(detail.join(", "))
}

fn privacy_audit(c: &Corpus) -> Check {
    let mut total = 0;
    for (name, res) in c.runs() {
        let rep = audit_privacy(&res.messages);
        ensure(rep.passed && rep.warning.is_none(), || {
            format!("{name}: {:?}", rep.violations)
        })?;
        total += rep.messages;
    }
    let mut leaked = c.feeder6.res.messages.clone();
    let i = leaked
        .iter()
        .position(|l| l.contains("ProsumerToLmo"))
        .ok_or("no prosumer message")?;
    let mut v: serde_json::Value = serde_json::from_str(&leaked[i]).map_err(|e| e.to_string())?;
    v["body"]["soc"] = serde_json::json!([0.5, 0.7]);
    leaked[i] = v.to_string();
    let rep = audit_privacy(&leaked);
    ensure(!rep.passed, || "instrumented leak passed the audit".into())?;
    Ok(format!("{total} messages clean, leak fixture rejected"))
}

fn check_schedule(p: &Prosumer, s: &ProsumerSchedule, dt: f64) -> Result<(), String> {
    let rep = validate_schedule(p, s, dt);
    ensure(rep.is_empty(), || format!("{}: {rep:?}", p.id))?;
    for (dev, st) in p.storages.iter().zip(&s.storage) {
        ensure(st.soc[dev.t_depart] >= dev.e_trip - 1e-6, || {
            format!("{}: trip floor", p.id)
        })?;
        for t in 0..st.soc.len() {
            ensure(st.x_ch[t] * st.x_dch[t] == 0.0, || {
                format!("{}: exclusivity at {t}", p.id)
            })?;
            ensure(
                st.soc[t] >= dev.soc_min - 1e-6 && st.soc[t] <= dev.soc_max + 1e-6,
                || format!("{}: soc bound at {t}", p.id),
            )?;
        }
    }
    for (fl, fs) in p.fls.iter().zip(&s.fl) {
        let e: f64 = (0..fs.p.len())
            .map(|t| (p.baseline_load[t] - fs.p[t]) * dt)
            .sum();
        ensure(e >= fl.e_min - 1e-6, || {
            format!("{}: energy floor {e} < {}", p.id, fl.e_min)
        })?;
    }
    Ok(())
}

fn feasibility_suite(c: &Corpus) -> Check {
    let mut n = 0;
    for (name, res) in c.runs() {
        for (p, s) in res.scenario.prosumers.iter().zip(&res.schedules) {
            check_schedule(p, s, res.scenario.dt).map_err(|e| format!("{name}: {e}"))?;
            n += 1;
        }
    }
    let selfish = solve_selfish(&c.feeder6.res.scenario).map_err(|e| e.to_string())?;
    for (p, s) in c
        .feeder6
        .res
        .scenario
        .prosumers
        .iter()
        .zip(&selfish.schedules)
    {
        check_schedule(p, s, c.feeder6.res.scenario.dt).map_err(|e| format!("selfish: {e}"))?;
        n += 1;
    }
    Ok(format!("{n} schedules valid"))
}

/// Six-hour prosumer with one storage: twelve binaries.
fn small_prosumer(seed: u64) -> (Prosumer, ProsumerInput) {
    let f = |k: u64| ((seed * 7919 + k * 104_729) % 1000) as f64 / 1000.0;
    let th = 6;
    let prosumer = Prosumer {
        id: format!("s{seed}"),
        bus_id: 2,
        baseline_load: (0..th).map(|t| 0.2 + 0.5 * f(t as u64)).collect(),
        pf_load: 1.0,
        pvs: vec![PvUnit {
            p_forecast: (0..th).map(|t| 0.6 * f(10 + t as u64)).collect(),
            s_inv: 1.0,
            pf: 0.95,
        }],
        storages: vec![StorageDevice {
            kind: if seed.is_multiple_of(2) {
                StorageKind::Bess
            } else {
                StorageKind::Ev
            },
            p_ch_max: 0.5,
            p_dch_max: 0.5,
            eta_ch: 0.92,
            eta_dch: 0.93,
            e0: 0.4,
            soc_min: 0.1,
            soc_max: 2.0,
            t_arrive: 0,
            t_depart: th - 1,
            e_trip: 0.8 * f(30),
            throughput_cost: 1.5,
        }],
        fls: Vec::new(),
    };
    let input = ProsumerInput {
        lambda_lem: (0..th).map(|t| 20.0 + 60.0 * f(40 + t as u64)).collect(),
        lambda_p: (0..th).map(|t| 10.0 * (f(50 + t as u64) - 0.5)).collect(),
        p_tilde: Some((0..th).map(|t| f(60 + t as u64) - 0.3).collect()),
        rho: 5.0,
    };
    (prosumer, input)
}

fn solver_suite() -> Check {
    let tol = 1e-8;
    let mut worst_gap: f64 = 0.0;
    for seed in 0..50 {
        let p = random_program(seed, seed % 2 == 0);
        let sol = solve_socp(&p, tol).map_err(|e| e.to_string())?;
        ensure(sol.status == SolveStatus::Optimal, || {
            format!("seed {seed}: {:?}", sol.status)
        })?;
        let gap = (sol.obj - sol.dual_obj).abs() / (1.0 + sol.obj.abs());
        worst_gap = worst_gap.max(gap);
    }
    ensure(worst_gap <= 10.0 * tol, || {
        format!("duality gap {worst_gap:.3e}")
    })?;

    let mut instances = 0;
    let mut check = |prob: &lem::miqp::MixedBinaryProgram, label: String| -> Result<(), String> {
        let n = prob.binary_indices.len();
        ensure(n <= 12, || format!("{label}: {n} binaries"))?;
        let brute = enumerate(prob).ok_or(format!("{label}: infeasible"))?;
        let r = solve_mbp(prob, 1e-9, 50_000).map_err(|e| e.to_string())?;
        ensure(
            (r.obj_incumbent - brute).abs() <= 1e-6 * (1.0 + brute.abs()),
            || format!("{label}: B&B {} vs enumeration {brute}", r.obj_incumbent),
        )?;
        instances += 1;
        Ok(())
    };
    for n in 1..=12 {
        for seed in 0..3 {
            check(
                &gated_instance(100 * n as u64 + seed, n),
                format!("gated {n}/{seed}"),
            )?;
        }
    }
    for seed in 0..6 {
        let (p, input) = small_prosumer(seed);
        let sub = build_subproblem(&p, &input, 1.0).map_err(|e| e.to_string())?;
        check(&sub.program, format!("prosumer {seed}"))?;
    }
    Ok(format!(
        "50 programs, worst gap {worst_gap:.2e}; {instances} binary instances match enumeration"
    ))
}

fn determinism(c: &Corpus) -> Check {
    let base = &c.feeder6.res;
    let same = |r: &ClearingResult| {
        r.trace == base.trace
            && r.messages == base.messages
            && r.schedules == base.schedules
            && r.dlmp == base.dlmp
    };
    let opts = |order| RunOptions {
        log_messages: true,
        order,
        ..Default::default()
    };
    let scn = fixture("feeder6");
    let mut variants = 0;
    for order in [
        SolveOrder::Forward,
        SolveOrder::Reverse,
        SolveOrder::Shuffled(5),
    ] {
        let r = run_clearing_with(&scn, &opts(order)).map_err(|e| e.to_string())?;
        ensure(same(&r), || format!("{order:?} differs"))?;
        variants += 1;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let r = pool
        .install(|| run_clearing_with(&scn, &opts(SolveOrder::Shuffled(9))))
        .map_err(|e| e.to_string())?;
    ensure(same(&r), || "single-thread run differs".into())?;
    variants += 1;
    let big = run_clearing_with(&fixture("ieee69"), &opts(SolveOrder::Reverse))
        .map_err(|e| e.to_string())?;
    ensure(
        big.trace == c.ieee69.res.trace && big.messages == c.ieee69.res.messages,
        || "69-bus replay differs".into(),
    )?;
    variants += 1;
    Ok(format!("{variants} replays bit-identical"))
}

fn criterion(id: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {id:>2} {name}: {detail}");
    outcome.is_ok()
}

fn main() -> ExitCode {
    let base = spec("ieee69");
    let corpus = Corpus {
        feeder6: clear(&fixture("feeder6")),
        ieee69: clear(&fixture("ieee69")),
        levels: [0.45, 0.6, 0.75]
            .into_iter()
            .map(|p| {
                let scn = generate_scenario(&GeneratorSpec {
                    prosumer_penetration: p,
                    ..base.clone()
                })
                .expect("spec valid");
                (p, clear(&scn))
            })
            .collect(),
    };
    let c = &corpus;
    let results = [
        criterion(1, "convex equivalence", || convex_equivalence(c)),
        criterion(2, "convergence envelope", || convergence_envelope(c)),
        criterion(3, "DLMP validity", || dlmp_validity(c)),
        criterion(4, "relaxation tightness", || relaxation_tightness(c)),
        criterion(5, "directional welfare", || directional_welfare(c)),
        criterion(6, "penetration monotonicity", || {
            penetration_monotonicity(c)
        }),
        criterion(7, "privacy audit", || privacy_audit(c)),
        criterion(8, "feasibility suite", || feasibility_suite(c)),
        criterion(9, "solver unit suite", solver_suite),
        criterion(10, "determinism", || determinism(c)),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
