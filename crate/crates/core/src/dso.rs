//! DSO agent: per-hour branch-flow SOCP, losses and nodal prices.
//!
//! Each hour is an independent program over line flows `(P, Q, ℓ)`, squared
//! voltages `υ`, the upstream exchange `(p_ug, q_ug)` and the loss total. The
//! relaxed current constraint `P² + Q² ≤ υ_from ℓ` is the rotated cone
//!
//! ```text
//! ‖(2P, 2Q, υ_from − ℓ)‖ ≤ υ_from + ℓ
//! ```
//!
//! and the line capacity is `‖(P, Q)‖ ≤ s_max`. Balances use the directed
//! DistFlow form: at bus `n` with parent line `f`,
//! `P_f − r_f ℓ_f − Σ_children P = p_net_n`; at the PCC `p_ug − Σ_children P = p_net`.
//! The price of bus `n` is the dual of its active balance divided by `Δt`.

use crate::model::{ModelError, NetworkModel, Topology};
use crate::socp::{solve_socp, ConicProgram, ConicSolution, ProgramBuilder, SolveStatus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const DSO_TOL: f64 = 1e-11;

/// Cost per unit of squared current on every line. Where losses are unpriced
/// (`r = 0` or a zero loss cost) the current would otherwise sit anywhere on a
/// flat optimal face, leaving the relaxation loose. Excluded from `objective`.
pub const CURRENT_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsoInput {
    /// Net active consumption per bus index and hour.
    pub p_net_node: Vec<Vec<f64>>,
    pub q_net_node: Vec<Vec<f64>>,
    /// LMO copy of the losses; `None` drops the proximal term.
    pub p_loss_tilde: Option<Vec<f64>>,
    pub lambda_loss: Vec<f64>,
}

impl DsoInput {
    /// Input with no loss coupling: zero multipliers and no proximal term.
    pub fn uncoupled(p_net_node: Vec<Vec<f64>>, q_net_node: Vec<Vec<f64>>) -> Self {
        let t = p_net_node.first().map_or(0, |v| v.len());
        Self {
            p_net_node,
            q_net_node,
            p_loss_tilde: None,
            lambda_loss: vec![0.0; t],
        }
    }

    pub fn horizon(&self) -> usize {
        self.lambda_loss.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsoSettings {
    pub dt: f64,
    pub loss_cost: Vec<f64>,
    pub rho_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Flow {
    pub p: f64,
    pub q: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsoOutput {
    pub p_loss: Vec<f64>,
    /// Currency per per-unit energy, `[bus][t]`.
    pub dlmp: Vec<Vec<f64>>,
    /// Squared voltages `[bus][t]`.
    pub v: Vec<Vec<f64>>,
    /// `[line][t]`
    pub flows: Vec<Vec<Flow>>,
    /// `υ_from ℓ − (P² + Q²)` per `[line][t]`.
    pub tightness: Vec<Vec<f64>>,
    pub p_ug: Vec<f64>,
    pub q_ug: Vec<f64>,
    /// Value of the hourly objective including the coupling terms.
    pub objective: Vec<f64>,
}

impl DsoOutput {
    /// `Σ_t C_t Δt p_loss,t`
    pub fn loss_cost(&self, settings: &DsoSettings) -> f64 {
        self.p_loss
            .iter()
            .zip(&settings.loss_cost)
            .map(|(l, c)| l * c * settings.dt)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DsoError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("hour {hour}: {family} ({detail})")]
    Infeasible {
        hour: usize,
        family: String,
        detail: String,
    },
    #[error("hour {hour}: solver stopped with {status:?}")]
    Solver { hour: usize, status: SolveStatus },
    #[error("input shape: {0}")]
    Shape(String),
}

/// Variable and row positions of one hourly program.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub n_buses: usize,
    pub n_lines: usize,
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub l: Vec<usize>,
    pub v: Vec<usize>,
    pub p_ug: usize,
    pub q_ug: usize,
    pub p_loss: usize,
    pub active_rows: Vec<usize>,
    pub reactive_rows: Vec<usize>,
    pub drop_rows: Vec<usize>,
    pub loss_row: usize,
    pub pcc_voltage_row: usize,
}

impl Layout {
    /// `3·lines + buses + 3`: flows, currents, voltages, exchange and losses.
    pub fn n_structural(&self) -> usize {
        3 * self.n_lines + self.n_buses + 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchFlowProgram {
    pub program: ConicProgram,
    pub layout: Layout,
    pub hour: usize,
}

/// Validated network together with its radial orientation.
#[derive(Debug, Clone)]
pub struct Dso<'a> {
    pub net: &'a NetworkModel,
    pub topo: Topology,
    pub settings: DsoSettings,
}

impl<'a> Dso<'a> {
    pub fn new(net: &'a NetworkModel, settings: DsoSettings) -> Result<Self, DsoError> {
        let topo = net.topology()?;
        Ok(Self {
            net,
            topo,
            settings,
        })
    }

    fn check_input(&self, input: &DsoInput) -> Result<(), DsoError> {
        let n = self.net.n_buses();
        let t = input.horizon();
        let ok = input.p_net_node.len() == n
            && input.q_net_node.len() == n
            && input
                .p_net_node
                .iter()
                .chain(&input.q_net_node)
                .all(|v| v.len() == t)
            && input.p_loss_tilde.as_ref().is_none_or(|v| v.len() == t)
            && self.settings.loss_cost.len() >= t;
        if ok {
            Ok(())
        } else {
            Err(DsoError::Shape(format!("expected {n} buses × {t} hours")))
        }
    }

    pub fn assemble(&self, input: &DsoInput, t: usize) -> BranchFlowProgram {
        let net = self.net;
        let topo = &self.topo;
        let (nb, nl) = (net.n_buses(), net.n_lines());
        let mut b = ProgramBuilder::new();
        let p: Vec<usize> = (0..nl).map(|_| b.free()).collect();
        let q: Vec<usize> = (0..nl).map(|_| b.free()).collect();
        let p_ug = b.free();
        let q_ug = b.free();
        let p_loss = b.free();
        let l: Vec<usize> = (0..nl).map(|_| b.nonneg()).collect();
        let v: Vec<usize> = (0..nb).map(|_| b.nonneg()).collect();

        let mut active_rows = vec![0; nb];
        let mut reactive_rows = vec![0; nb];
        for n in 0..nb {
            let mut tp = Vec::new();
            let mut tq = Vec::new();
            match topo.parent_line[n] {
                Some(f) => {
                    let line = &net.lines[f];
                    tp.extend([(p[f], 1.0), (l[f], -line.r)]);
                    tq.extend([(q[f], 1.0), (l[f], -line.x)]);
                }
                None => {
                    tp.push((p_ug, 1.0));
                    tq.push((q_ug, 1.0));
                }
            }
            for &c in &topo.child_lines[n] {
                tp.push((p[c], -1.0));
                tq.push((q[c], -1.0));
            }
            active_rows[n] = b.eq(&tp, input.p_net_node[n][t]);
            reactive_rows[n] = b.eq(&tq, input.q_net_node[n][t]);
        }
        let mut drop_rows = vec![0; nl];
        for f in 0..nl {
            let line = &net.lines[f];
            let (from, to) = (topo.line_from[f], topo.line_to[f]);
            drop_rows[f] = b.eq(
                &[
                    (v[from], 1.0),
                    (v[to], -1.0),
                    (p[f], -2.0 * line.r),
                    (q[f], -2.0 * line.x),
                    (l[f], line.r * line.r + line.x * line.x),
                ],
                0.0,
            );
        }
        let mut loss_terms = vec![(p_loss, 1.0)];
        loss_terms.extend(
            (0..nl)
                .filter(|&f| net.lines[f].r != 0.0)
                .map(|f| (l[f], -net.lines[f].r)),
        );
        let loss_row = b.eq(&loss_terms, 0.0);
        let pcc_voltage_row = b.eq(&[(v[topo.pcc], 1.0)], 1.0);

        for f in 0..nl {
            let from = topo.line_from[f];
            let c = b.soc(4);
            b.eq(&[(c, 1.0), (v[from], -1.0), (l[f], -1.0)], 0.0);
            b.eq(&[(c + 1, 1.0), (v[from], -1.0), (l[f], 1.0)], 0.0);
            b.eq(&[(c + 2, 1.0), (p[f], -2.0)], 0.0);
            b.eq(&[(c + 3, 1.0), (q[f], -2.0)], 0.0);
        }
        for f in 0..nl {
            let s = b.soc(3);
            b.eq(&[(s, 1.0)], net.lines[f].s_max);
            b.eq(&[(s + 1, 1.0), (p[f], -1.0)], 0.0);
            b.eq(&[(s + 2, 1.0), (q[f], -1.0)], 0.0);
        }
        for n in 0..nb {
            if n == topo.pcc {
                continue;
            }
            let bus = &net.buses[n];
            b.le(&[(v[n], 1.0)], bus.vmax * bus.vmax);
            b.ge(&[(v[n], 1.0)], bus.vmin * bus.vmin);
        }
        for f in 0..nl {
            let vmin = net.buses[topo.line_from[f]].vmin;
            let s = net.lines[f].s_max;
            b.le(&[(l[f], 1.0)], s * s / (vmin * vmin));
        }

        let dt = self.settings.dt;
        let lam = input.lambda_loss[t];
        b.add_cost(p_loss, self.settings.loss_cost[t] * dt - lam);
        for &lf in &l {
            b.add_cost(lf, CURRENT_WEIGHT * dt);
        }
        if let Some(tilde) = &input.p_loss_tilde {
            let rho = self.settings.rho_prime;
            let pt = tilde[t];
            b.add_cost(p_loss, -rho * pt);
            b.add_quad(p_loss, rho);
            b.add_offset(lam * pt + 0.5 * rho * pt * pt);
        }

        BranchFlowProgram {
            program: b.build(),
            layout: Layout {
                n_buses: nb,
                n_lines: nl,
                p,
                q,
                l,
                v,
                p_ug,
                q_ug,
                p_loss,
                active_rows,
                reactive_rows,
                drop_rows,
                loss_row,
                pcc_voltage_row,
            },
            hour: t,
        }
    }

    /// Assembles and solves one hour; infeasibility is diagnosed by a load flow.
    pub fn solve_hour(
        &self,
        input: &DsoInput,
        t: usize,
    ) -> Result<(BranchFlowProgram, ConicSolution), DsoError> {
        let bfp = self.assemble(input, t);
        let sol = solve_socp(&bfp.program, DSO_TOL).map_err(|e| DsoError::Shape(e.to_string()))?;
        match sol.status {
            SolveStatus::Optimal => Ok((bfp, sol)),
            SolveStatus::Infeasible | SolveStatus::Unbounded => Err(self.diagnose(input, t)),
            status => Err(DsoError::Solver { hour: t, status }),
        }
    }

    pub fn solve(&self, input: &DsoInput) -> Result<DsoOutput, DsoError> {
        self.check_input(input)?;
        let hours: Vec<Result<(BranchFlowProgram, ConicSolution), DsoError>> = (0..input.horizon())
            .into_par_iter()
            .map(|t| self.solve_hour(input, t))
            .collect();
        let (nb, nl) = (self.net.n_buses(), self.net.n_lines());
        let th = input.horizon();
        let mut out = DsoOutput {
            p_loss: vec![0.0; th],
            dlmp: vec![vec![0.0; th]; nb],
            v: vec![vec![0.0; th]; nb],
            flows: vec![vec![Flow::default(); th]; nl],
            tightness: vec![vec![0.0; th]; nl],
            p_ug: vec![0.0; th],
            q_ug: vec![0.0; th],
            objective: vec![0.0; th],
        };
        for (t, res) in hours.into_iter().enumerate() {
            let (bfp, sol) = res?;
            let lay = &bfp.layout;
            let x = &sol.x;
            out.p_loss[t] = (0..nl).map(|f| self.net.lines[f].r * x[lay.l[f]]).sum();
            out.p_ug[t] = x[lay.p_ug];
            out.q_ug[t] = x[lay.q_ug];
            let tie: f64 = lay
                .l
                .iter()
                .map(|&i| CURRENT_WEIGHT * self.settings.dt * x[i])
                .sum();
            out.objective[t] = sol.obj - tie;
            for n in 0..nb {
                out.dlmp[n][t] = sol.y[lay.active_rows[n]] / self.settings.dt;
                out.v[n][t] = x[lay.v[n]];
            }
            for f in 0..nl {
                let vf = x[lay.v[self.topo.line_from[f]]];
                let mut fl = Flow {
                    p: x[lay.p[f]],
                    q: x[lay.q[f]],
                    l: x[lay.l[f]],
                };
                // Current on an ideal line enters no other constraint, so the
                // tight value is an equally optimal point.
                let ideal = self.net.lines[f].r == 0.0 && self.net.lines[f].x == 0.0;
                if ideal && vf > 0.0 {
                    fl.l = (fl.p * fl.p + fl.q * fl.q) / vf;
                }
                out.flows[f][t] = fl;
                out.tightness[f][t] = vf * fl.l - (fl.p * fl.p + fl.q * fl.q);
            }
        }
        Ok(out)
    }

    fn diagnose(&self, input: &DsoInput, t: usize) -> DsoError {
        let p: Vec<f64> = input.p_net_node.iter().map(|r| r[t]).collect();
        let q: Vec<f64> = input.q_net_node.iter().map(|r| r[t]).collect();
        let lf = load_flow(self.net, &self.topo, &p, &q);
        let infeasible = |family: &str, detail: String| DsoError::Infeasible {
            hour: t,
            family: family.to_string(),
            detail,
        };
        if !lf.converged {
            return infeasible("load flow", "no voltage solution at this loading".into());
        }
        for (f, line) in self.net.lines.iter().enumerate() {
            let s = lf.p[f].hypot(lf.q[f]);
            if s > line.s_max {
                return infeasible(
                    "line capacity",
                    format!(
                        "line {}-{} carries {s:.4} > {:.4}",
                        line.from, line.to, line.s_max
                    ),
                );
            }
        }
        for (n, bus) in self.net.buses.iter().enumerate() {
            let vm = lf.v[n].sqrt();
            if vm < bus.vmin {
                return infeasible(
                    "voltage lower bound",
                    format!("bus {} at {vm:.4} < {}", bus.id, bus.vmin),
                );
            }
            if vm > bus.vmax {
                return infeasible(
                    "voltage upper bound",
                    format!("bus {} at {vm:.4} > {}", bus.id, bus.vmax),
                );
            }
        }
        infeasible(
            "network limits",
            "no single violated bound found by load flow".into(),
        )
    }
}

/// Solution of the DistFlow equations by backward/forward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadFlow {
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub l: Vec<f64>,
    pub converged: bool,
}

pub fn load_flow(net: &NetworkModel, topo: &Topology, p_net: &[f64], q_net: &[f64]) -> LoadFlow {
    let (nb, nl) = (net.n_buses(), net.n_lines());
    let mut v = vec![1.0; nb];
    let mut p = vec![0.0; nl];
    let mut q = vec![0.0; nl];
    let mut l = vec![0.0; nl];
    let mut converged = false;
    for _ in 0..200 {
        for &n in topo.order.iter().rev() {
            if let Some(f) = topo.parent_line[n] {
                let line = &net.lines[f];
                let (mut sp, mut sq) = (p_net[n], q_net[n]);
                for &c in &topo.child_lines[n] {
                    sp += p[c];
                    sq += q[c];
                }
                p[f] = sp + line.r * l[f];
                q[f] = sq + line.x * l[f];
            }
        }
        let mut change: f64 = 0.0;
        for &n in &topo.order {
            for &f in &topo.child_lines[n] {
                let line = &net.lines[f];
                let to = topo.line_to[f];
                let new_l = (p[f] * p[f] + q[f] * q[f]) / v[n];
                change = change.max((new_l - l[f]).abs());
                l[f] = new_l;
                v[to] = v[n] - 2.0 * (line.r * p[f] + line.x * q[f])
                    + (line.r.powi(2) + line.x.powi(2)) * l[f];
            }
        }
        if v.iter().any(|x| !(*x > 0.0)) || !change.is_finite() {
            break;
        }
        if change < 1e-12 {
            converged = true;
            break;
        }
    }
    LoadFlow {
        v,
        p,
        q,
        l,
        converged,
    }
}

/// Convenience wrapper over [`Dso::assemble`].
pub fn assemble_branch_flow(
    net: &NetworkModel,
    settings: &DsoSettings,
    input: &DsoInput,
    t: usize,
) -> Result<BranchFlowProgram, DsoError> {
    let dso = Dso::new(net, settings.clone())?;
    dso.check_input(input)?;
    Ok(dso.assemble(input, t))
}

pub fn solve_dso_subproblem(
    net: &NetworkModel,
    settings: &DsoSettings,
    input: &DsoInput,
) -> Result<DsoOutput, DsoError> {
    Dso::new(net, settings.clone())?.solve(input)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TightnessReport {
    pub max_residual: f64,
    /// `(line, hour, residual)` above the tolerance.
    pub flagged: Vec<(usize, usize, f64)>,
}

/// Recomputes `υ_from ℓ − (P² + Q²)` from the reported flows and voltages.
pub fn check_tightness(
    net: &NetworkModel,
    out: &DsoOutput,
    tol: f64,
) -> Result<TightnessReport, ModelError> {
    let topo = net.topology()?;
    let mut rep = TightnessReport::default();
    for (f, row) in out.flows.iter().enumerate() {
        for (t, fl) in row.iter().enumerate() {
            let r = out.v[topo.line_from[f]][t] * fl.l - (fl.p * fl.p + fl.q * fl.q);
            rep.max_residual = rep.max_residual.max(r);
            if r > tol {
                rep.flagged.push((f, t, r));
            }
        }
    }
    Ok(rep)
}
