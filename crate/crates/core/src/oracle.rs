//! Reference solutions: one joint program over every agent, and uncoordinated
//! price-taking prosumers evaluated on the network afterwards.

use crate::dso::{
    load_flow, Dso, DsoError, DsoInput, DsoOutput, DsoSettings, Layout, CURRENT_WEIGHT,
};
use crate::linalg::CscMatrix;
use crate::lmo::aggregate_to_nodes;
use crate::market::{compute_costs, ClearingResult, Costs};
use crate::miqp::{MixedBinaryProgram, RepairHints};
use crate::model::{to_per_unit, ModelError, Scenario};
use crate::prosumer::{
    build_subproblem, extract_schedule, solve_subproblem_iii, ProsumerError, ProsumerInput,
    ProsumerSchedule, ProsumerSubproblem,
};
use crate::socp::{ConicProgram, SolveStatus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleMode {
    Centralized,
    Selfish,
}

#[derive(Debug, Clone, Copy)]
pub enum Binaries<'a> {
    Relaxed,
    FixedFrom(&'a ClearingResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub mode: OracleMode,
    /// LMO + DSO + device costs.
    pub objective: f64,
    /// Full nodal prices from the joint program, `[bus][t]`.
    pub dlmp: Option<Vec<Vec<f64>>>,
    pub schedules: Vec<ProsumerSchedule>,
    pub p_ug: Vec<f64>,
    pub p_loss: Vec<f64>,
    pub costs: Costs,
    /// Network limits violated by selfish injections, if any.
    pub congestion: Option<String>,
    pub assumptions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prosumer(#[from] ProsumerError),
    #[error("joint program {status:?}: {diagnostic}")]
    Infeasible {
        status: SolveStatus,
        diagnostic: String,
    },
    #[error("fixed binaries come from a run with different prosumers")]
    Mismatch,
}

#[derive(Default)]
struct Merger {
    c: Vec<f64>,
    q: Vec<f64>,
    offset: f64,
    triplets: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    cones: Vec<crate::socp::Cone>,
}

impl Merger {
    /// Appends `p` block-diagonally; returns its variable and row offsets.
    fn push(&mut self, p: &ConicProgram) -> (usize, usize) {
        let (vo, ro) = (self.c.len(), self.b.len());
        self.c.extend(&p.c);
        self.q.extend((0..p.n_vars).map(|i| p.quad(i)));
        self.offset += p.offset;
        self.triplets.extend(
            p.a.triplets()
                .into_iter()
                .map(|(r, c, v)| (r + ro, c + vo, v)),
        );
        self.b.extend(&p.b);
        self.cones.extend(&p.cones);
        (vo, ro)
    }

    fn build(self) -> ConicProgram {
        let n = self.c.len();
        let has_q = self.q.iter().any(|&v| v != 0.0);
        ConicProgram {
            n_vars: n,
            a: CscMatrix::from_triplets(self.b.len(), n, &self.triplets),
            c: self.c,
            q: if has_q { self.q } else { Vec::new() },
            offset: self.offset,
            b: self.b,
            cones: self.cones,
        }
    }
}

fn dso_for(scn: &Scenario, loss_weight_extra: f64) -> Result<Dso<'_>, ModelError> {
    let settings = DsoSettings {
        dt: scn.dt,
        loss_cost: scn
            .profiles
            .loss_cost
            .iter()
            .map(|c| c + loss_weight_extra)
            .collect(),
        rho_prime: 0.0,
    };
    Dso::new(&scn.network, settings).map_err(|e| match e {
        DsoError::Model(m) => m,
        other => ModelError::Scenario(vec![other.to_string()]),
    })
}

/// Joint clearing: network, exchange and every prosumer in one program.
pub fn solve_centralized(
    scenario: &Scenario,
    binaries: Binaries<'_>,
) -> Result<OracleResult, OracleError> {
    scenario.validate()?;
    let scn = to_per_unit(scenario)?;
    let (th, dt) = (scn.horizon, scn.dt);
    let dso = dso_for(&scn, 0.0)?;
    let (bg_p, _) = scn.background_by_bus();
    let q_node = scn.reactive_forecast();
    let psi = scn.prosumer_buses();
    let base_input = DsoInput::uncoupled(bg_p.clone(), q_node.clone());

    let mut m = Merger::default();
    let mut hours: Vec<(Layout, usize, usize)> = Vec::with_capacity(th);
    for t in 0..th {
        let bfp = dso.assemble(&base_input, t);
        let (vo, ro) = m.push(&bfp.program);
        m.c[vo + bfp.layout.p_ug] += scn.profiles.wem_price[t] * dt;
        hours.push((bfp.layout, vo, ro));
    }
    let zero = ProsumerInput::price_taker(&vec![0.0; th]);
    let mut subs: Vec<(ProsumerSubproblem, usize)> = Vec::new();
    let mut bins = Vec::new();
    for (a, pros) in scn.prosumers.iter().enumerate() {
        let sub = build_subproblem(pros, &zero, dt)?;
        let (vo, _) = m.push(&sub.program.relaxation);
        for t in 0..th {
            let (lay, _, hro) = &hours[t];
            m.triplets.push((
                hro + lay.active_rows[psi[a]],
                vo + sub.layout.p_net[t],
                -1.0,
            ));
        }
        bins.extend(sub.program.binary_indices.iter().map(|b| b + vo));
        subs.push((sub, vo));
    }
    let mbp = MixedBinaryProgram {
        relaxation: m.build(),
        binary_indices: bins,
        hints: RepairHints::default(),
    };

    let fixings: Vec<(usize, f64)> = match binaries {
        Binaries::Relaxed => Vec::new(),
        Binaries::FixedFrom(res) => {
            if res.schedules.len() != subs.len() {
                return Err(OracleError::Mismatch);
            }
            let mut f = Vec::new();
            for ((sub, vo), sched) in subs.iter().zip(&res.schedules) {
                for (sv, ss) in sub.layout.storage.iter().zip(&sched.storage) {
                    for t in 0..th {
                        if let (Some(xc), Some(xd)) = (sv.x_ch[t], sv.x_dch[t]) {
                            f.push((vo + xc, ss.x_ch[t]));
                            f.push((vo + xd, ss.x_dch[t]));
                        }
                    }
                }
                for (fv, fs) in sub.layout.fl.iter().zip(&sched.fl) {
                    f.extend(fv.y.iter().zip(&fs.y).map(|(&y, &val)| (vo + y, val)));
                }
            }
            f
        }
    };
    let sol = mbp
        .solve_fixed(&fixings)
        .map_err(|e| OracleError::Infeasible {
            status: SolveStatus::Infeasible,
            diagnostic: e.to_string(),
        })?;
    let sol = match sol {
        Some(s) if s.is_optimal() => s,
        other => {
            let status = other.map_or(SolveStatus::Infeasible, |s| s.status);
            return Err(OracleError::Infeasible {
                status,
                diagnostic: diagnose_baseline(&scn, &dso),
            });
        }
    };

    let x = &sol.x;
    let mut dlmp = vec![vec![0.0; th]; scn.network.n_buses()];
    let mut p_ug = vec![0.0; th];
    let mut p_loss = vec![0.0; th];
    let mut tie = 0.0;
    for (t, (lay, vo, ro)) in hours.iter().enumerate() {
        tie += lay
            .l
            .iter()
            .map(|&i| CURRENT_WEIGHT * dt * x[vo + i])
            .sum::<f64>();
        p_ug[t] = x[vo + lay.p_ug];
        p_loss[t] = (0..lay.n_lines)
            .map(|f| scn.network.lines[f].r * x[vo + lay.l[f]])
            .sum();
        for n in 0..lay.n_buses {
            dlmp[n][t] = sol.y[ro + lay.active_rows[n]] / dt;
        }
    }
    let schedules: Vec<ProsumerSchedule> = subs
        .iter()
        .zip(&scn.prosumers)
        .enumerate()
        .map(|(a, ((sub, vo), pros))| {
            let xs = &x[*vo..*vo + sub.program.relaxation.n_vars];
            extract_schedule(pros, &sub.layout, xs, dt, &dlmp[psi[a]])
        })
        .collect();
    let costs = compute_costs(&scn, &p_ug, &p_loss, &schedules);
    Ok(OracleResult {
        mode: OracleMode::Centralized,
        objective: sol.obj - tie,
        dlmp: Some(dlmp),
        schedules,
        p_ug,
        p_loss,
        costs,
        congestion: None,
        assumptions: match binaries {
            Binaries::Relaxed => vec!["binaries relaxed to [0, 1]".into()],
            Binaries::FixedFrom(_) => vec!["binaries fixed from the distributed run".into()],
        },
    })
}

fn diagnose_baseline(scn: &Scenario, dso: &Dso<'_>) -> String {
    let (bg_p, _) = scn.background_by_bus();
    let base: Vec<Vec<f64>> = scn
        .prosumers
        .iter()
        .map(|p| p.baseline_load.clone())
        .collect();
    let node = aggregate_to_nodes(&scn.prosumer_buses(), &base, &bg_p).unwrap_or(bg_p);
    match dso.solve(&DsoInput::uncoupled(node, scn.reactive_forecast())) {
        Err(e) => e.to_string(),
        Ok(_) => "device constraints conflict with network limits".into(),
    }
}

/// Prosumers schedule against the wholesale price alone; the network is then
/// evaluated at the resulting injections.
pub fn solve_selfish(scenario: &Scenario) -> Result<OracleResult, OracleError> {
    scenario.validate()?;
    let scn = to_per_unit(scenario)?;
    let (th, dt) = (scn.horizon, scn.dt);
    let cfg = &scn.admm;
    let input = ProsumerInput::price_taker(&scn.profiles.wem_price);
    let schedules: Vec<ProsumerSchedule> = scn
        .prosumers
        .par_iter()
        .map(|p| {
            solve_subproblem_iii(
                p,
                &input,
                dt,
                cfg.prosumer_solver,
                cfg.mip_gap,
                cfg.node_limit,
            )
        })
        .collect::<Result<_, _>>()?;
    let (bg_p, _) = scn.background_by_bus();
    let psi = scn.prosumer_buses();
    let p_net: Vec<Vec<f64>> = schedules.iter().map(|s| s.p_net.clone()).collect();
    let node = aggregate_to_nodes(&psi, &p_net, &bg_p)
        .map_err(|e| ModelError::Scenario(vec![e.to_string()]))?;
    let q_node = scn.reactive_forecast();
    let dso = dso_for(&scn, 0.0)?;
    let (p_loss, congestion) = match dso.solve(&DsoInput::uncoupled(node.clone(), q_node.clone())) {
        Ok(out) => (out.p_loss, None),
        Err(e) => (
            evaluate_losses(&scn, &dso, &node, &q_node),
            Some(e.to_string()),
        ),
    };
    let bg_total = scn.background_total();
    let p_ug: Vec<f64> = (0..th)
        .map(|t| p_net.iter().map(|r| r[t]).sum::<f64>() + bg_total[t] + p_loss[t])
        .collect();
    let costs = compute_costs(&scn, &p_ug, &p_loss, &schedules);
    Ok(OracleResult {
        mode: OracleMode::Selfish,
        objective: costs.total(),
        dlmp: None,
        schedules,
        p_ug,
        p_loss,
        costs,
        congestion,
        assumptions: vec!["prosumers pay the wholesale price".into()],
    })
}

/// Losses from a load flow when the limits cannot all be met.
fn evaluate_losses(scn: &Scenario, dso: &Dso<'_>, p: &[Vec<f64>], q: &[Vec<f64>]) -> Vec<f64> {
    (0..scn.horizon)
        .map(|t| {
            let pt: Vec<f64> = p.iter().map(|r| r[t]).collect();
            let qt: Vec<f64> = q.iter().map(|r| r[t]).collect();
            let lf = load_flow(&scn.network, &dso.topo, &pt, &qt);
            scn.network
                .lines
                .iter()
                .zip(&lf.l)
                .map(|(line, l)| line.r * l)
                .sum()
        })
        .collect()
}

/// DSO evaluation of fixed injections with no coupling terms.
pub fn evaluate_network(scenario: &Scenario, p_net: &[Vec<f64>]) -> Result<DsoOutput, OracleError> {
    let scn = to_per_unit(scenario)?;
    let (bg_p, _) = scn.background_by_bus();
    let node = aggregate_to_nodes(&scn.prosumer_buses(), p_net, &bg_p)
        .map_err(|e| ModelError::Scenario(vec![e.to_string()]))?;
    let dso = dso_for(&scn, 0.0)?;
    dso.solve(&DsoInput::uncoupled(node, scn.reactive_forecast()))
        .map_err(|e| OracleError::Infeasible {
            status: SolveStatus::Infeasible,
            diagnostic: e.to_string(),
        })
}
