//! Two-loop clearing over a typed message bus.
//!
//! Outer loop: prosumers schedule against the last prices and consensus
//! signals. Inner loop: DSO prices the network at the reported injections,
//! the LMO updates its copies and the loss multiplier. After the inner loop
//! the LMO updates the power multiplier and broadcasts prices.
//!
//! Agents only exchange [`AgentMessage`] values. With message logging on, each
//! delivery is serialized as one JSON line, which [`audit_privacy`] checks.

use crate::dso::{Dso, DsoError, DsoInput, DsoOutput, DsoSettings};
use crate::lmo::{
    aggregate_to_nodes, map_dlmp_to_prosumers, solve_subproblem_i, update_loss_dual,
    update_power_dual, LmoError, LmoState,
};
use crate::model::{to_per_unit, AdmmConfig, ModelError, Scenario};
use crate::prosumer::{solve_subproblem_iii, ProsumerError, ProsumerInput, ProsumerSchedule};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum AgentMessage {
    LmoToProsumer {
        lambda_lem: Vec<f64>,
        p_tilde: Option<Vec<f64>>,
        lambda_p: Vec<f64>,
    },
    ProsumerToLmo {
        p_net: Vec<f64>,
    },
    LmoToDso {
        p_net_node: Vec<Vec<f64>>,
        p_loss_tilde: Option<Vec<f64>>,
        lambda_loss: Vec<f64>,
    },
    DsoToLmo {
        p_loss: Vec<f64>,
        dlmp: Vec<Vec<f64>>,
    },
}

impl AgentMessage {
    /// Variant name and its payload keys.
    pub fn schema() -> [(&'static str, &'static [&'static str]); 4] {
        [
            ("LmoToProsumer", &["lambda_lem", "p_tilde", "lambda_p"]),
            ("ProsumerToLmo", &["p_net"]),
            ("LmoToDso", &["p_net_node", "p_loss_tilde", "lambda_loss"]),
            ("DsoToLmo", &["p_loss", "dlmp"]),
        ]
    }
}

/// Addressed delivery as written to the message log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub seq: usize,
    pub outer: usize,
    pub inner: usize,
    pub from: String,
    pub to: String,
    pub body: AgentMessage,
}

const ENVELOPE_KEYS: [&str; 6] = ["seq", "outer", "inner", "from", "to", "body"];

#[derive(Debug, Clone, Default)]
struct MessageBus {
    enabled: bool,
    seq: usize,
    log: Vec<String>,
}

impl MessageBus {
    fn send(
        &mut self,
        outer: usize,
        inner: usize,
        from: &str,
        to: &str,
        body: AgentMessage,
    ) -> AgentMessage {
        if self.enabled {
            let env = Envelope {
                seq: self.seq,
                outer,
                inner,
                from: from.to_string(),
                to: to.to_string(),
                body,
            };
            self.log
                .push(serde_json::to_string(&env).expect("messages serialize"));
            self.seq += 1;
            env.body
        } else {
            self.seq += 1;
            body
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub passed: bool,
    pub messages: usize,
    /// One entry per offending key or malformed line.
    pub violations: Vec<String>,
    pub warning: Option<String>,
}

/// Checks that every logged line is an envelope around a known message with
/// exactly its schema keys.
pub fn audit_privacy(log: &[String]) -> PrivacyReport {
    let schema: BTreeMap<&str, BTreeSet<&str>> = AgentMessage::schema()
        .into_iter()
        .map(|(k, v)| (k, v.iter().copied().collect()))
        .collect();
    let mut rep = PrivacyReport {
        passed: true,
        messages: log.len(),
        ..Default::default()
    };
    if log.is_empty() {
        rep.warning = Some("empty message log; nothing to audit".into());
    }
    for (i, line) in log.iter().enumerate() {
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                rep.violations.push(format!("line {i}: not JSON ({e})"));
                continue;
            }
        };
        let Some(env) = value.as_object() else {
            rep.violations.push(format!("line {i}: not an object"));
            continue;
        };
        for k in env.keys().filter(|k| !ENVELOPE_KEYS.contains(&k.as_str())) {
            rep.violations
                .push(format!("line {i}: field `{k}` outside the message schema"));
        }
        let Some(body) = env.get("body").and_then(|b| b.as_object()) else {
            rep.violations.push(format!("line {i}: missing body"));
            continue;
        };
        let kind = body.get("type").and_then(|t| t.as_str()).unwrap_or("");
        let Some(allowed) = schema.get(kind) else {
            rep.violations
                .push(format!("line {i}: unknown message type `{kind}`"));
            continue;
        };
        for k in body
            .keys()
            .filter(|k| k.as_str() != "type" && !allowed.contains(k.as_str()))
        {
            rep.violations
                .push(format!("line {i}: field `{k}` outside {kind}"));
        }
        for (k, v) in body.iter().filter(|(k, _)| k.as_str() != "type") {
            if !numeric_payload(v) {
                rep.violations
                    .push(format!("line {i}: field `{k}` is not numeric"));
            }
        }
    }
    rep.passed = rep.violations.is_empty();
    rep
}

fn numeric_payload(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Null | serde_json::Value::Number(_) => true,
        serde_json::Value::Array(a) => a.iter().all(numeric_payload),
        _ => false,
    }
}

/// Infinity-norm stopping test, inclusive.
pub fn check_stop(residuals: &[f64], eps: f64) -> bool {
    residuals.iter().all(|r| r.abs() <= eps)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn max_abs_diff2(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| max_abs_diff(x, y))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer: usize,
    pub inner_iterations: usize,
    /// `max |λ_p(k+1) − λ_p(k)|`
    pub lambda_p_change: f64,
    /// `max |p̃ − p|`
    pub consensus_residual: f64,
    /// `ρ max |p̃(k) − p̃(k−1)|`, with `p̃(0) = 0`.
    pub dual_residual: f64,
    pub prosumer_objective: f64,
    pub stop: bool,
    pub millis: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRecord {
    pub outer: usize,
    pub inner: usize,
    pub lambda_loss_change: f64,
    pub loss_residual: f64,
    pub dual_residual: f64,
    pub dso_objective: f64,
    pub lmo_objective: f64,
    pub stop: bool,
    pub millis: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub eps1: f64,
    pub eps2: f64,
    pub dual_residual_check: bool,
    pub outer: Vec<OuterRecord>,
    pub inner: Vec<InnerRecord>,
}

impl ConvergenceTrace {
    /// Re-derives every recorded stop decision from the recorded residuals.
    pub fn stops_consistent(&self) -> bool {
        let extra = |d: f64| if self.dual_residual_check { d } else { 0.0 };
        self.outer
            .iter()
            .all(|r| r.stop == check_stop(&[r.lambda_p_change, extra(r.dual_residual)], self.eps1))
            && self.inner.iter().all(|r| {
                r.stop == check_stop(&[r.lambda_loss_change, extra(r.dual_residual)], self.eps2)
            })
    }

    /// Copy without wall-clock fields.
    pub fn without_timing(&self) -> Self {
        let mut t = self.clone();
        t.outer.iter_mut().for_each(|r| r.millis = None);
        t.inner.iter_mut().for_each(|r| r.millis = None);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClearingStatus {
    Converged,
    IterLimit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    /// `Σ λ_wem Δt p_ug`
    pub lmo: f64,
    /// `Σ C_loss Δt p_loss`
    pub dso: f64,
    /// Energy at the local price plus device costs, per prosumer.
    pub prosumers: Vec<f64>,
    /// Device costs over all prosumers.
    pub devices: f64,
}

impl Costs {
    /// LMO + DSO + device costs, the quantity the centralized problem minimizes.
    pub fn total(&self) -> f64 {
        self.lmo + self.dso + self.devices
    }

    pub fn prosumer_mean(&self) -> f64 {
        if self.prosumers.is_empty() {
            0.0
        } else {
            self.prosumers.iter().sum::<f64>() / self.prosumers.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub status: ClearingStatus,
    pub outer_iterations: usize,
    pub max_inner_iterations: usize,
    /// Per-unit scenario the run used.
    pub scenario: Scenario,
    /// Network price component, currency per per-unit energy, `[bus][t]`.
    pub dlmp: Vec<Vec<f64>>,
    /// Price each prosumer paid, `[prosumer][t]`.
    pub lambda_lem: Vec<Vec<f64>>,
    pub schedules: Vec<ProsumerSchedule>,
    pub p_tilde: Vec<Vec<f64>>,
    pub p_loss_tilde: Vec<f64>,
    pub lambda_p: Vec<Vec<f64>>,
    pub lambda_loss: Vec<f64>,
    pub p_ug: Vec<f64>,
    pub p_loss: Vec<f64>,
    pub dso: DsoOutput,
    pub costs: Costs,
    pub trace: ConvergenceTrace,
    pub messages: Vec<String>,
}

impl ClearingResult {
    pub fn total_objective(&self) -> f64 {
        self.costs.total()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClearingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lmo(#[from] LmoError),
    #[error("outer {outer}, inner {inner}: DSO failed: {source}")]
    Dso {
        outer: usize,
        inner: usize,
        source: DsoError,
        trace: Box<ConvergenceTrace>,
    },
    #[error("outer {outer}: {source}")]
    Prosumer {
        outer: usize,
        source: ProsumerError,
        trace: Box<ConvergenceTrace>,
    },
}

impl ClearingError {
    pub fn trace(&self) -> Option<&ConvergenceTrace> {
        match self {
            ClearingError::Dso { trace, .. } | ClearingError::Prosumer { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

/// Order in which prosumer problems are dispatched within an outer iteration.
/// Results are merged by prosumer index regardless.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SolveOrder {
    #[default]
    Forward,
    Reverse,
    Shuffled(u64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub log_messages: bool,
    pub timing: bool,
    pub order: SolveOrder,
}

fn elapsed(start: Instant, on: bool) -> Option<u64> {
    on.then(|| start.elapsed().as_millis() as u64)
}

/// Costs from primitives: exchange, losses and prosumer schedules.
pub fn compute_costs(
    scn: &Scenario,
    p_ug: &[f64],
    p_loss: &[f64],
    schedules: &[ProsumerSchedule],
) -> Costs {
    let dt = scn.dt;
    Costs {
        lmo: (0..scn.horizon)
            .map(|t| scn.profiles.wem_price[t] * dt * p_ug[t])
            .sum(),
        dso: (0..scn.horizon)
            .map(|t| scn.profiles.loss_cost[t] * dt * p_loss[t])
            .sum(),
        prosumers: schedules.iter().map(|s| s.total_cost()).collect(),
        devices: schedules.iter().map(|s| s.cost_devices).sum(),
    }
}

pub fn run_clearing(scenario: &Scenario) -> Result<ClearingResult, ClearingError> {
    run_clearing_with(scenario, &RunOptions::default())
}

pub fn run_clearing_with(
    scenario: &Scenario,
    opts: &RunOptions,
) -> Result<ClearingResult, ClearingError> {
    scenario.validate()?;
    let scn = to_per_unit(scenario)?;
    let cfg: &AdmmConfig = &scn.admm;
    let th = scn.horizon;
    let dt = scn.dt;
    let na = scn.prosumers.len();
    let nb = scn.network.n_buses();
    let wem = scn.profiles.wem_price.clone();
    let psi = scn.prosumer_buses();
    let (bg_p, _) = scn.background_by_bus();
    let bg_total = scn.background_total();
    let q_node = scn.reactive_forecast();
    let dso = Dso::new(
        &scn.network,
        DsoSettings {
            dt,
            loss_cost: scn.profiles.loss_cost.clone(),
            rho_prime: cfg.rho_prime,
        },
    )
    .map_err(|e| match e {
        DsoError::Model(m) => ClearingError::Model(m),
        other => ClearingError::Model(ModelError::Scenario(vec![other.to_string()])),
    })?;
    let mut lmo = LmoState::new(psi.clone(), nb, &wem, dt, cfg)?;
    let mut bus = MessageBus {
        enabled: opts.log_messages,
        ..Default::default()
    };
    let mut trace = ConvergenceTrace {
        eps1: cfg.eps1,
        eps2: cfg.eps2,
        dual_residual_check: cfg.dual_residual_check,
        ..Default::default()
    };
    let extra = |d: f64| if cfg.dual_residual_check { d } else { 0.0 };

    let mut order: Vec<usize> = (0..na).collect();
    match opts.order {
        SolveOrder::Forward => {}
        SolveOrder::Reverse => order.reverse(),
        SolveOrder::Shuffled(seed) => order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }

    // Initial broadcast: zero local price, initial multipliers, no copy yet.
    let mut inputs: Vec<ProsumerInput> = (0..na)
        .map(|a| {
            let msg = bus.send(
                0,
                0,
                "lmo",
                &scn.prosumers[a].id,
                AgentMessage::LmoToProsumer {
                    lambda_lem: vec![0.0; th],
                    p_tilde: None,
                    lambda_p: lmo.lambda_p[a].clone(),
                },
            );
            prosumer_input(msg, cfg.rho)
        })
        .collect();

    let mut status = ClearingStatus::IterLimit;
    let mut schedules: Vec<ProsumerSchedule> = Vec::new();
    let mut last_dso: Option<DsoOutput> = None;
    let mut lambda_lem = vec![vec![0.0; th]; na];
    let mut p_ug = vec![0.0; th];
    let mut prev_loss_tilde: Option<Vec<f64>> = None;
    // Dual residuals are measured from the initial copies.
    let mut loss_base = lmo.p_loss_tilde.clone();
    let mut prev_p_tilde = lmo.p_tilde.clone();
    let mut outer_done = 0;
    let mut max_inner = 0;

    for k in 1..=cfg.max_outer {
        let start = Instant::now();
        outer_done = k;
        let solved: Vec<(usize, Result<ProsumerSchedule, ProsumerError>)> = order
            .par_iter()
            .map(|&a| {
                let r = solve_subproblem_iii(
                    &scn.prosumers[a],
                    &inputs[a],
                    dt,
                    cfg.prosumer_solver,
                    cfg.mip_gap,
                    cfg.node_limit,
                );
                (a, r)
            })
            .collect();
        let mut slots: Vec<Option<ProsumerSchedule>> = vec![None; na];
        for (a, r) in solved {
            match r {
                Ok(s) => slots[a] = Some(s),
                Err(source) => {
                    return Err(ClearingError::Prosumer {
                        outer: k,
                        source,
                        trace: Box::new(trace),
                    })
                }
            }
        }
        schedules = slots
            .into_iter()
            .map(|s| s.expect("every prosumer solved"))
            .collect();
        let prosumer_objective: f64 = schedules.iter().map(|s| s.objective).sum();
        let p_net: Vec<Vec<f64>> = schedules
            .iter()
            .map(|s| {
                match bus.send(
                    k,
                    0,
                    &s.id,
                    "lmo",
                    AgentMessage::ProsumerToLmo {
                        p_net: s.p_net.clone(),
                    },
                ) {
                    AgentMessage::ProsumerToLmo { p_net } => p_net,
                    _ => unreachable!(),
                }
            })
            .collect();
        let p_net_node = aggregate_to_nodes(&psi, &p_net, &bg_p)?;

        let mut inner_done = 0;
        let mut dlmp = vec![vec![0.0; th]; nb];
        for kk in 1..=cfg.max_inner {
            let istart = Instant::now();
            inner_done = kk;
            let to_dso = bus.send(
                k,
                kk,
                "lmo",
                "dso",
                AgentMessage::LmoToDso {
                    p_net_node: p_net_node.clone(),
                    p_loss_tilde: prev_loss_tilde.clone(),
                    lambda_loss: lmo.lambda_loss.clone(),
                },
            );
            let AgentMessage::LmoToDso {
                p_net_node: pn,
                p_loss_tilde,
                lambda_loss,
            } = to_dso
            else {
                unreachable!()
            };
            let input = DsoInput {
                p_net_node: pn,
                q_net_node: q_node.clone(),
                p_loss_tilde,
                lambda_loss,
            };
            let out = match dso.solve(&input) {
                Ok(o) => o,
                Err(source) => {
                    return Err(ClearingError::Dso {
                        outer: k,
                        inner: kk,
                        source,
                        trace: Box::new(trace),
                    })
                }
            };
            let dso_objective: f64 = out.objective.iter().sum();
            let reply = bus.send(
                k,
                kk,
                "dso",
                "lmo",
                AgentMessage::DsoToLmo {
                    p_loss: out.p_loss.clone(),
                    dlmp: out.dlmp.clone(),
                },
            );
            let AgentMessage::DsoToLmo {
                p_loss,
                dlmp: prices,
            } = reply
            else {
                unreachable!()
            };
            dlmp = prices;
            last_dso = Some(out);

            let sol = solve_subproblem_i(&lmo, &wem, dt, &bg_total, &p_net, &p_loss, cfg)?;
            let lmo_objective = crate::lmo::subproblem_i_objective(
                &lmo,
                &wem,
                dt,
                &bg_total,
                &p_net,
                &p_loss,
                cfg,
                &sol.p_tilde,
                &sol.p_loss_tilde,
            );
            let new_loss =
                update_loss_dual(&lmo.lambda_loss, &sol.p_loss_tilde, &p_loss, cfg.rho_prime);
            let change = max_abs_diff(&new_loss, &lmo.lambda_loss);
            let dual = cfg.rho_prime * max_abs_diff(&sol.p_loss_tilde, &loss_base);
            let stop = check_stop(&[change, extra(dual)], cfg.eps2);
            trace.inner.push(InnerRecord {
                outer: k,
                inner: kk,
                lambda_loss_change: change,
                loss_residual: max_abs_diff(&sol.p_loss_tilde, &p_loss),
                dual_residual: dual,
                dso_objective,
                lmo_objective,
                stop,
                millis: elapsed(istart, opts.timing),
            });
            lmo.lambda_loss = new_loss;
            lmo.p_loss_tilde = sol.p_loss_tilde.clone();
            lmo.p_tilde = sol.p_tilde;
            p_ug = sol.p_ug;
            loss_base = sol.p_loss_tilde.clone();
            prev_loss_tilde = Some(sol.p_loss_tilde);
            if stop {
                break;
            }
        }
        max_inner = max_inner.max(inner_done);

        lambda_lem = map_dlmp_to_prosumers(&psi, &dlmp)?;
        let new_lp = update_power_dual(&lmo.lambda_p, &lmo.p_tilde, &p_net, cfg.rho);
        let change = max_abs_diff2(&new_lp, &lmo.lambda_p);
        let consensus = max_abs_diff2(&lmo.p_tilde, &p_net);
        let dual = cfg.rho * max_abs_diff2(&lmo.p_tilde, &prev_p_tilde);
        let stop = check_stop(&[change, extra(dual)], cfg.eps1);
        lmo.lambda_p = new_lp;
        prev_p_tilde = lmo.p_tilde.clone();
        for (a, input) in inputs.iter_mut().enumerate() {
            let msg = bus.send(
                k,
                0,
                "lmo",
                &scn.prosumers[a].id,
                AgentMessage::LmoToProsumer {
                    lambda_lem: lambda_lem[a].clone(),
                    p_tilde: Some(lmo.p_tilde[a].clone()),
                    lambda_p: lmo.lambda_p[a].clone(),
                },
            );
            *input = prosumer_input(msg, cfg.rho);
        }
        trace.outer.push(OuterRecord {
            outer: k,
            inner_iterations: inner_done,
            lambda_p_change: change,
            consensus_residual: consensus,
            dual_residual: dual,
            prosumer_objective,
            stop,
            millis: elapsed(start, opts.timing),
        });
        if stop {
            status = ClearingStatus::Converged;
            break;
        }
    }

    let dso_out = last_dso.expect("at least one inner iteration");
    // Energy settles at the final local prices.
    for (s, price) in schedules.iter_mut().zip(&lambda_lem) {
        s.cost_energy = (0..th).map(|t| price[t] * dt * s.p_net[t]).sum();
    }
    let costs = compute_costs(&scn, &p_ug, &dso_out.p_loss, &schedules);
    Ok(ClearingResult {
        status,
        outer_iterations: outer_done,
        max_inner_iterations: max_inner,
        dlmp: dso_out.dlmp.clone(),
        lambda_lem,
        schedules,
        p_tilde: lmo.p_tilde,
        p_loss_tilde: lmo.p_loss_tilde,
        lambda_p: lmo.lambda_p,
        lambda_loss: lmo.lambda_loss,
        p_ug,
        p_loss: dso_out.p_loss.clone(),
        dso: dso_out,
        costs,
        trace,
        messages: bus.log,
        scenario: scn,
    })
}

/// Prosumer-side view of an LMO message.
pub fn prosumer_input(msg: AgentMessage, rho: f64) -> ProsumerInput {
    match msg {
        AgentMessage::LmoToProsumer {
            lambda_lem,
            p_tilde,
            lambda_p,
        } => ProsumerInput {
            lambda_lem,
            lambda_p,
            p_tilde,
            rho,
        },
        other => panic!("prosumer received {other:?}"),
    }
}
