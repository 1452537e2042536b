//! Prosumer agent: device model as a mixed-binary conic program, schedule
//! reconstruction and an independent feasibility check.
//!
//! Net consumption per hour is
//! `p_net = L − Σ p_fl + Σ p_ch − Σ p_dch − Σ p_pv`, where `p_fl` is a signed
//! deviation from the baseline `L` (positive curtails). The objective is
//!
//! ```text
//! Σ_t λ_lem Δt p_net + device costs + λ_p (p̃ − p_net) + ρ/2 (p̃ − p_net)²
//! ```
//!
//! with device costs `c_thr (p_ch + p_dch) Δt` and `c_fl |p_fl| Δt`.

use crate::miqp::{relax_and_repair, solve_mbp, MiqpError, MixedBinaryProgram, RepairHints};
use crate::model::{
    reactive_from_pf, soc_step, Prosumer, ProsumerSolver, StorageDevice, StorageKind,
};
use crate::socp::ProgramBuilder;
use serde::{Deserialize, Serialize};

pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsumerInput {
    pub lambda_lem: Vec<f64>,
    pub lambda_p: Vec<f64>,
    /// LMO copy of the net consumption; `None` drops the proximal term.
    pub p_tilde: Option<Vec<f64>>,
    pub rho: f64,
}

impl ProsumerInput {
    /// Price-taking input: energy at `price`, no coupling terms.
    pub fn price_taker(price: &[f64]) -> Self {
        Self {
            lambda_lem: price.to_vec(),
            lambda_p: vec![0.0; price.len()],
            p_tilde: None,
            rho: 0.0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.lambda_lem.len()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProsumerError {
    #[error("prosumer {id}: {detail}")]
    Static { id: String, detail: String },
    #[error("prosumer {id}: no feasible schedule ({detail})")]
    Infeasible { id: String, detail: String },
    #[error("prosumer {id}: {source}")]
    Solver { id: String, source: MiqpError },
    #[error("prosumer {id}: input covers {got} hours, expected {expected}")]
    Shape {
        id: String,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StorageVars {
    pub p_ch: Vec<Option<usize>>,
    pub p_dch: Vec<Option<usize>>,
    pub x_ch: Vec<Option<usize>>,
    pub x_dch: Vec<Option<usize>>,
    pub soc: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlVars {
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
    pub y: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProsumerLayout {
    pub p_net: Vec<usize>,
    pub pv: Vec<Vec<Option<usize>>>,
    pub storage: Vec<StorageVars>,
    pub fl: Vec<FlVars>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProsumerSubproblem {
    pub program: MixedBinaryProgram,
    pub layout: ProsumerLayout,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PvSchedule {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StorageSchedule {
    pub p_ch: Vec<f64>,
    pub p_dch: Vec<f64>,
    pub x_ch: Vec<f64>,
    pub x_dch: Vec<f64>,
    /// Energy at the end of each hour; `e0` before the window, held after it.
    pub soc: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlSchedule {
    pub p: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProsumerSchedule {
    pub id: String,
    pub p_net: Vec<f64>,
    /// Generation side: PV plus discharge.
    pub p_g: Vec<f64>,
    /// Consumption side: baseline minus flexible deviation plus charge.
    pub p_l: Vec<f64>,
    pub pv: Vec<PvSchedule>,
    pub storage: Vec<StorageSchedule>,
    pub fl: Vec<FlSchedule>,
    pub cost_energy: f64,
    pub cost_devices: f64,
    /// Objective value reported by the solver.
    pub objective: f64,
}

impl ProsumerSchedule {
    pub fn total_cost(&self) -> f64 {
        self.cost_energy + self.cost_devices
    }
}

fn storage_reach(s: &StorageDevice, dt: f64) -> f64 {
    (s.e0 + s.eta_ch * s.p_ch_max * s.window_len() as f64 * dt).min(s.soc_max)
}

fn static_checks(pros: &Prosumer, th: usize, dt: f64) -> Result<(), ProsumerError> {
    let err = |detail: String| ProsumerError::Static {
        id: pros.id.clone(),
        detail,
    };
    for (k, s) in pros.storages.iter().enumerate() {
        if s.t_depart >= th || s.t_arrive > s.t_depart {
            return Err(err(format!("storage {k} window outside horizon")));
        }
        let reach = storage_reach(s, dt);
        if s.e_trip > reach + 1e-9 {
            return Err(err(format!(
                "storage {k} trip energy {} above reachable {reach}",
                s.e_trip
            )));
        }
    }
    for (k, fl) in pros.fls.iter().enumerate() {
        let mut gains: Vec<f64> = fl.p_fl_max.iter().map(|p| p * dt).collect();
        gains.sort_by(|a, b| b.total_cmp(a));
        let most: f64 =
            pros.baseline_load.iter().sum::<f64>() * dt + gains.iter().take(fl.t_max).sum::<f64>();
        if fl.e_min > most + 1e-9 {
            return Err(err(format!(
                "flexible load {k} energy floor {} above reachable {most}",
                fl.e_min
            )));
        }
    }
    if pros.baseline_load.len() != th {
        return Err(ProsumerError::Shape {
            id: pros.id.clone(),
            got: pros.baseline_load.len(),
            expected: th,
        });
    }
    Ok(())
}

pub fn build_subproblem(
    pros: &Prosumer,
    input: &ProsumerInput,
    dt: f64,
) -> Result<ProsumerSubproblem, ProsumerError> {
    let th = input.horizon();
    if input.lambda_p.len() != th || input.p_tilde.as_ref().is_some_and(|p| p.len() != th) {
        return Err(ProsumerError::Shape {
            id: pros.id.clone(),
            got: input.lambda_p.len(),
            expected: th,
        });
    }
    static_checks(pros, th, dt)?;

    let mut b = ProgramBuilder::new();
    let mut lay = ProsumerLayout::default();
    let mut binaries = Vec::new();
    let mut hints = RepairHints::default();
    lay.p_net = (0..th).map(|_| b.free()).collect();
    // Injection terms of the net-consumption row, per hour.
    let mut net_terms: Vec<Vec<(usize, f64)>> = lay.p_net.iter().map(|&v| vec![(v, 1.0)]).collect();

    for pv in &pros.pvs {
        let vars: Vec<Option<usize>> = (0..th)
            .map(|t| {
                let cap = pv.cap(t);
                (cap > 0.0).then(|| {
                    let v = b.nonneg();
                    b.le(&[(v, 1.0)], cap);
                    net_terms[t].push((v, 1.0));
                    v
                })
            })
            .collect();
        lay.pv.push(vars);
    }

    for s in &pros.storages {
        let mut sv = StorageVars {
            p_ch: vec![None; th],
            p_dch: vec![None; th],
            x_ch: vec![None; th],
            x_dch: vec![None; th],
            soc: vec![None; th],
        };
        let mut prev: Option<usize> = None;
        for t in s.window() {
            let pc = b.nonneg();
            let pd = b.nonneg();
            let xc = b.nonneg();
            let xd = b.nonneg();
            let soc = b.nonneg();
            b.le(&[(xc, 1.0), (xd, 1.0)], 1.0);
            b.le(&[(pc, 1.0), (xc, -s.p_ch_max)], 0.0);
            b.le(&[(pd, 1.0), (xd, -s.p_dch_max)], 0.0);
            let mut rec = vec![(soc, 1.0), (pc, -s.eta_ch * dt), (pd, dt / s.eta_dch)];
            let rhs = match prev {
                Some(p) => {
                    rec.push((p, -1.0));
                    0.0
                }
                None => s.e0,
            };
            b.eq(&rec, rhs);
            let floor = if t == s.t_depart {
                s.soc_min.max(s.e_trip)
            } else {
                s.soc_min
            };
            if floor > 0.0 {
                b.ge(&[(soc, 1.0)], floor);
            }
            b.le(&[(soc, 1.0)], s.soc_max);
            b.add_cost(pc, s.throughput_cost * dt);
            b.add_cost(pd, s.throughput_cost * dt);
            net_terms[t].extend([(pc, -1.0), (pd, 1.0)]);
            binaries.extend([xc, xd]);
            hints.gates.extend([(xc, pc), (xd, pd)]);
            hints.exclusive.push((xc, xd));
            sv.p_ch[t] = Some(pc);
            sv.p_dch[t] = Some(pd);
            sv.x_ch[t] = Some(xc);
            sv.x_dch[t] = Some(xd);
            sv.soc[t] = Some(soc);
            prev = Some(soc);
        }
        lay.storage.push(sv);
    }

    for fl in &pros.fls {
        let mut fv = FlVars::default();
        let mut energy = Vec::new();
        for t in 0..th {
            let plus = b.nonneg();
            let minus = b.nonneg();
            let y = b.nonneg();
            b.le(&[(plus, 1.0), (minus, 1.0), (y, -fl.p_fl_max[t])], 0.0);
            b.le(&[(y, 1.0)], 1.0);
            b.add_cost(plus, fl.discomfort_cost * dt);
            b.add_cost(minus, fl.discomfort_cost * dt);
            net_terms[t].extend([(plus, 1.0), (minus, -1.0)]);
            energy.extend([(plus, -dt), (minus, dt)]);
            binaries.push(y);
            hints.gates.extend([(y, plus), (y, minus)]);
            fv.plus.push(plus);
            fv.minus.push(minus);
            fv.y.push(y);
        }
        let base: f64 = pros.baseline_load.iter().sum::<f64>() * dt;
        if fl.e_min > 0.0 {
            b.ge(&energy, fl.e_min - base);
        }
        b.le(
            &fv.y.iter().map(|&y| (y, 1.0)).collect::<Vec<_>>(),
            fl.t_max as f64,
        );
        hints.cardinality.push((fv.y.clone(), fl.t_max));
        lay.fl.push(fv);
    }

    for (t, terms) in net_terms.iter().enumerate() {
        b.eq(terms, pros.baseline_load[t]);
        let v = lay.p_net[t];
        b.add_cost(v, input.lambda_lem[t] * dt - input.lambda_p[t]);
        if let Some(pt) = &input.p_tilde {
            b.add_cost(v, -input.rho * pt[t]);
            b.add_quad(v, input.rho);
            b.add_offset(input.lambda_p[t] * pt[t] + 0.5 * input.rho * pt[t] * pt[t]);
        }
    }

    Ok(ProsumerSubproblem {
        program: MixedBinaryProgram {
            relaxation: b.build(),
            binary_indices: binaries,
            hints,
        },
        layout: lay,
    })
}

/// Solves the prosumer problem and reconstructs its schedule.
pub fn solve_subproblem_iii(
    pros: &Prosumer,
    input: &ProsumerInput,
    dt: f64,
    mode: ProsumerSolver,
    mip_gap: f64,
    node_limit: usize,
) -> Result<ProsumerSchedule, ProsumerError> {
    let sub = build_subproblem(pros, input, dt)?;
    let solver_err = |source| ProsumerError::Solver {
        id: pros.id.clone(),
        source,
    };
    let (x, obj) = match mode {
        ProsumerSolver::Exact => {
            let res = solve_mbp(&sub.program, mip_gap, node_limit).map_err(solver_err)?;
            match res.x_incumbent {
                Some(x) => (x, res.obj_incumbent),
                None => return Err(infeasible(pros, input, dt)),
            }
        }
        ProsumerSolver::RelaxRepair => match relax_and_repair(&sub.program).map_err(solver_err)? {
            Some(r) => (r.x, r.obj),
            None => return Err(infeasible(pros, input, dt)),
        },
    };
    let mut sched = extract_schedule(pros, &sub.layout, &x, dt, &input.lambda_lem);
    sched.objective = obj;
    Ok(sched)
}

/// Names the first hour whose storage energy requirement cannot be met.
fn infeasible(pros: &Prosumer, input: &ProsumerInput, dt: f64) -> ProsumerError {
    let th = input.horizon();
    let mut detail = "device constraints conflict".to_string();
    for (k, s) in pros.storages.iter().enumerate() {
        let mut hi = s.e0;
        for t in s.window() {
            hi = (hi + s.eta_ch * s.p_ch_max * dt).min(s.soc_max);
            let floor = if t == s.t_depart {
                s.soc_min.max(s.e_trip)
            } else {
                s.soc_min
            };
            if hi + FEAS_TOL < floor && t < th {
                detail = format!("storage {k} cannot reach {floor} by hour {t}");
                break;
            }
        }
    }
    ProsumerError::Infeasible {
        id: pros.id.clone(),
        detail,
    }
}

fn pick(x: &[f64], v: Option<usize>) -> f64 {
    v.map_or(0.0, |i| x[i])
}

pub fn extract_schedule(
    pros: &Prosumer,
    lay: &ProsumerLayout,
    x: &[f64],
    dt: f64,
    lambda_lem: &[f64],
) -> ProsumerSchedule {
    let th = lay.p_net.len();
    let mut s = ProsumerSchedule {
        id: pros.id.clone(),
        p_net: lay.p_net.iter().map(|&i| x[i]).collect(),
        p_l: pros.baseline_load.clone(),
        p_g: vec![0.0; th],
        ..Default::default()
    };
    for (pv, vars) in pros.pvs.iter().zip(&lay.pv) {
        let p: Vec<f64> = vars.iter().map(|&v| pick(x, v)).collect();
        let q = p
            .iter()
            .map(|&v| reactive_from_pf(v.max(0.0), pv.pf).unwrap_or(0.0))
            .collect();
        for t in 0..th {
            s.p_g[t] += p[t];
        }
        s.pv.push(PvSchedule { p, q });
    }
    for (dev, vars) in pros.storages.iter().zip(&lay.storage) {
        let round = |v: Option<usize>| v.map_or(0.0, |i| x[i].round());
        let mut st = StorageSchedule {
            p_ch: vars.p_ch.iter().map(|&v| pick(x, v)).collect(),
            p_dch: vars.p_dch.iter().map(|&v| pick(x, v)).collect(),
            x_ch: vars.x_ch.iter().map(|&v| round(v)).collect(),
            x_dch: vars.x_dch.iter().map(|&v| round(v)).collect(),
            soc: vec![0.0; th],
        };
        let mut level = dev.e0;
        for t in 0..th {
            if let Some(i) = vars.soc[t] {
                level = x[i];
            }
            st.soc[t] = level;
            s.p_l[t] += st.p_ch[t];
            s.p_g[t] += st.p_dch[t];
            s.cost_devices += dev.throughput_cost * (st.p_ch[t] + st.p_dch[t]) * dt;
        }
        s.storage.push(st);
    }
    for (dev, vars) in pros.fls.iter().zip(&lay.fl) {
        let p: Vec<f64> = (0..th)
            .map(|t| x[vars.plus[t]] - x[vars.minus[t]])
            .collect();
        for t in 0..th {
            s.p_l[t] -= p[t];
            s.cost_devices += dev.discomfort_cost * (x[vars.plus[t]] + x[vars.minus[t]]) * dt;
        }
        s.fl.push(FlSchedule {
            p,
            y: vars.y.iter().map(|&i| x[i].round()).collect(),
        });
    }
    s.cost_energy = (0..th).map(|t| lambda_lem[t] * dt * s.p_net[t]).sum();
    s
}

/// Prosumer objective recomputed from a schedule.
pub fn schedule_objective(sched: &ProsumerSchedule, input: &ProsumerInput) -> f64 {
    let mut v = sched.cost_energy + sched.cost_devices;
    for t in 0..sched.p_net.len() {
        let pt = input.p_tilde.as_ref().map_or(0.0, |p| p[t]);
        let r = pt - sched.p_net[t];
        v += input.lambda_p[t] * r;
        if input.p_tilde.is_some() {
            v += 0.5 * input.rho * r * r;
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `net`, `pv 0`, `storage 1`, `fl 0`, ...
    pub device: String,
    pub hour: Option<usize>,
    pub constraint: String,
    pub amount: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub violations: Vec<Violation>,
}

impl ScheduleReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, constraint: &str) -> bool {
        self.violations.iter().any(|v| v.constraint == constraint)
    }

    fn check(&mut self, device: &str, hour: Option<usize>, constraint: &str, excess: f64) {
        if !(excess <= FEAS_TOL) {
            self.violations.push(Violation {
                device: device.to_string(),
                hour,
                constraint: constraint.to_string(),
                amount: excess,
            });
        }
    }
}

fn binary_excess(v: f64) -> f64 {
    v.abs().min((v - 1.0).abs())
}

/// Re-checks every device constraint by direct arithmetic.
pub fn validate_schedule(pros: &Prosumer, sched: &ProsumerSchedule, dt: f64) -> ScheduleReport {
    let mut rep = ScheduleReport::default();
    let th = pros.baseline_load.len();
    if sched.p_net.len() != th
        || sched.pv.len() != pros.pvs.len()
        || sched.storage.len() != pros.storages.len()
        || sched.fl.len() != pros.fls.len()
    {
        rep.check("schedule", None, "shape", f64::INFINITY);
        return rep;
    }
    let mut net = pros.baseline_load.clone();
    for (u, (pv, ps)) in pros.pvs.iter().zip(&sched.pv).enumerate() {
        let dev = format!("pv {u}");
        for t in 0..th {
            rep.check(&dev, Some(t), "pv lower", -ps.p[t]);
            rep.check(&dev, Some(t), "pv cap", ps.p[t] - pv.cap(t));
            net[t] -= ps.p[t];
        }
    }
    for (k, (s, ss)) in pros.storages.iter().zip(&sched.storage).enumerate() {
        let dev = format!(
            "{} {k}",
            if s.kind == StorageKind::Ev {
                "ev"
            } else {
                "bess"
            }
        );
        let mut level = s.e0;
        for t in 0..th {
            let (pc, pd, xc, xd) = (ss.p_ch[t], ss.p_dch[t], ss.x_ch[t], ss.x_dch[t]);
            net[t] += pc - pd;
            if !s.in_window(t) {
                let off = pc.abs().max(pd.abs()).max(xc.abs()).max(xd.abs());
                rep.check(&dev, Some(t), "outside window", off);
                continue;
            }
            rep.check(
                &dev,
                Some(t),
                "binary",
                binary_excess(xc).max(binary_excess(xd)),
            );
            rep.check(&dev, Some(t), "exclusivity", xc + xd - 1.0);
            rep.check(&dev, Some(t), "exclusivity", pc.min(pd));
            rep.check(&dev, Some(t), "charge bound", pc - s.p_ch_max * xc);
            rep.check(&dev, Some(t), "discharge bound", pd - s.p_dch_max * xd);
            rep.check(&dev, Some(t), "power lower", -pc.min(pd));
            let next = soc_step(level, pc, pd, s.eta_ch, s.eta_dch, dt);
            rep.check(&dev, Some(t), "soc recursion", (ss.soc[t] - next).abs());
            level = ss.soc[t];
            rep.check(&dev, Some(t), "soc lower", s.soc_min - level);
            rep.check(&dev, Some(t), "soc upper", level - s.soc_max);
            if t == s.t_depart {
                rep.check(&dev, Some(t), "trip floor", s.e_trip - level);
            }
        }
    }
    for (k, (f, fs)) in pros.fls.iter().zip(&sched.fl).enumerate() {
        let dev = format!("fl {k}");
        let mut energy = 0.0;
        for t in 0..th {
            net[t] -= fs.p[t];
            energy += (pros.baseline_load[t] - fs.p[t]) * dt;
            rep.check(&dev, Some(t), "binary", binary_excess(fs.y[t]));
            rep.check(
                &dev,
                Some(t),
                "fl bound",
                fs.p[t].abs() - f.p_fl_max[t] * fs.y[t],
            );
        }
        let count: f64 = fs.y.iter().sum();
        rep.check(&dev, None, "fl count", count - f.t_max as f64);
        rep.check(&dev, None, "energy floor", f.e_min - energy);
    }
    for t in 0..th {
        rep.check(
            "net",
            Some(t),
            "net balance",
            (sched.p_net[t] - net[t]).abs(),
        );
        rep.check(
            "net",
            Some(t),
            "net identity",
            (sched.p_net[t] - (sched.p_l[t] - sched.p_g[t])).abs(),
        );
    }
    rep
}
