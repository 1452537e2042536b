//! Result files: `dlmp.csv`, `schedules.csv`, `trace.csv`, `summary.json` and,
//! when messages were logged, `messages.jsonl`.

use super::{io_err, IoError};
use crate::market::{ClearingResult, ClearingStatus, ConvergenceTrace, Costs};
use crate::model::{Scenario, StorageKind};
use crate::oracle::{OracleMode, OracleResult};
use crate::prosumer::ProsumerSchedule;
use serde_json::json;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Anything the emitter can write, in per-unit quantities.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mode: String,
    pub status: String,
    pub outer_iterations: usize,
    pub max_inner_iterations: usize,
    /// Currency per per-unit energy, `[bus][t]`.
    pub dlmp: Option<Vec<Vec<f64>>>,
    pub schedules: Vec<ProsumerSchedule>,
    pub costs: Costs,
    pub trace: Option<ConvergenceTrace>,
    pub messages: Vec<String>,
    /// Per-unit scenario.
    pub scenario: Scenario,
    pub congestion: Option<String>,
    pub assumptions: Vec<String>,
}

impl From<&ClearingResult> for RunOutput {
    fn from(r: &ClearingResult) -> Self {
        Self {
            mode: "distributed".into(),
            status: match r.status {
                ClearingStatus::Converged => "converged",
                ClearingStatus::IterLimit => "iteration_limit",
            }
            .into(),
            outer_iterations: r.outer_iterations,
            max_inner_iterations: r.max_inner_iterations,
            dlmp: Some(r.dlmp.clone()),
            schedules: r.schedules.clone(),
            costs: r.costs.clone(),
            trace: Some(r.trace.clone()),
            messages: r.messages.clone(),
            scenario: r.scenario.clone(),
            congestion: None,
            assumptions: vec![
                "prices are the network component; the wholesale price is added by the LMO".into(),
            ],
        }
    }
}

impl RunOutput {
    /// `scenario` must be the per-unit scenario the oracle ran on.
    pub fn from_oracle(r: &OracleResult, scenario: Scenario) -> Self {
        Self {
            mode: match r.mode {
                OracleMode::Centralized => "centralized",
                OracleMode::Selfish => "selfish",
            }
            .into(),
            status: "solved".into(),
            outer_iterations: 0,
            max_inner_iterations: 0,
            dlmp: r.dlmp.clone(),
            schedules: r.schedules.clone(),
            costs: r.costs.clone(),
            trace: None,
            messages: Vec::new(),
            scenario,
            congestion: r.congestion.clone(),
            assumptions: r.assumptions.clone(),
        }
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), IoError> {
    let p = dir.join(name);
    fs::write(&p, body).map_err(|e| io_err(&p, e))
}

fn opt(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn dlmp_csv(out: &RunOutput) -> String {
    let mut s = String::from("bus,t,price\n");
    if let Some(d) = &out.dlmp {
        let mva = out.scenario.network.base_mva;
        for (bus, row) in out.scenario.network.buses.iter().zip(d) {
            for (t, v) in row.iter().enumerate() {
                let _ = writeln!(s, "{},{},{:?}", bus.id, t, v / mva);
            }
        }
    }
    s
}

fn schedules_csv(out: &RunOutput) -> String {
    let mva = out.scenario.network.base_mva;
    let mut s = String::from("prosumer,device,t,p,q,soc,status\n");
    for (pros, sched) in out.scenario.prosumers.iter().zip(&out.schedules) {
        let id = &sched.id;
        for (t, p) in sched.p_net.iter().enumerate() {
            let _ = writeln!(s, "{id},net,{t},{:?},,,", p * mva);
        }
        for (u, pv) in sched.pv.iter().enumerate() {
            for t in 0..pv.p.len() {
                let _ = writeln!(
                    s,
                    "{id},pv{u},{t},{:?},{:?},,",
                    pv.p[t] * mva,
                    pv.q[t] * mva
                );
            }
        }
        for (k, (dev, st)) in pros.storages.iter().zip(&sched.storage).enumerate() {
            let name = match dev.kind {
                StorageKind::Bess => "bess",
                StorageKind::Ev => "ev",
            };
            for t in 0..st.soc.len() {
                let p = st.p_ch[t] - st.p_dch[t];
                let status = if !dev.in_window(t) {
                    "away"
                } else if st.x_ch[t] > 0.5 {
                    "charge"
                } else if st.x_dch[t] > 0.5 {
                    "discharge"
                } else {
                    "idle"
                };
                let _ = writeln!(
                    s,
                    "{id},{name}{k},{t},{:?},,{:?},{status}",
                    p * mva,
                    st.soc[t] * mva
                );
            }
        }
        for (k, fl) in sched.fl.iter().enumerate() {
            for t in 0..fl.p.len() {
                let status = if fl.y[t] > 0.5 { "shifted" } else { "nominal" };
                let _ = writeln!(s, "{id},fl{k},{t},{:?},,,{status}", fl.p[t] * mva);
            }
        }
    }
    s
}

fn trace_csv(trace: Option<&ConvergenceTrace>) -> String {
    let mut s = String::from(
        "iter,inner_iter,kind,lambda_change,residual,dual_residual,dso_objective,lmo_objective,prosumer_objective,stop,millis\n",
    );
    let Some(tr) = trace else { return s };
    for o in &tr.outer {
        for i in tr.inner.iter().filter(|i| i.outer == o.outer) {
            let _ = writeln!(
                s,
                "{},{},inner,{:?},{:?},{:?},{:?},{:?},,{},{}",
                i.outer,
                i.inner,
                i.lambda_loss_change,
                i.loss_residual,
                i.dual_residual,
                i.dso_objective,
                i.lmo_objective,
                i.stop,
                opt(i.millis),
            );
        }
        let _ = writeln!(
            s,
            "{},{},outer,{:?},{:?},{:?},,,{:?},{},{}",
            o.outer,
            o.inner_iterations,
            o.lambda_p_change,
            o.consensus_residual,
            o.dual_residual,
            o.prosumer_objective,
            o.stop,
            opt(o.millis),
        );
    }
    s
}

fn summary_json(out: &RunOutput) -> String {
    let prosumers: serde_json::Map<String, serde_json::Value> = out
        .schedules
        .iter()
        .zip(&out.costs.prosumers)
        .map(|(s, c)| (s.id.clone(), json!(c)))
        .collect();
    let v = json!({
        "scenario": out.scenario.name,
        "mode": out.mode,
        "status": out.status,
        "iterations": { "outer": out.outer_iterations, "max_inner": out.max_inner_iterations },
        "costs": {
            "lmo": out.costs.lmo,
            "dso": out.costs.dso,
            "devices": out.costs.devices,
            "prosumers": prosumers,
            "prosumer_mean": out.costs.prosumer_mean(),
            "total": out.costs.total(),
        },
        "congestion": out.congestion,
        "assumptions": out.assumptions,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("summary is plain data");
    s.push('\n');
    s
}

/// Writes every result file into `dir`, creating it. Output is a pure
/// function of `out`; timing fields are written only if recorded.
pub fn emit_results(out: &RunOutput, dir: impl AsRef<Path>) -> Result<(), IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write(dir, "dlmp.csv", &dlmp_csv(out))?;
    write(dir, "schedules.csv", &schedules_csv(out))?;
    write(dir, "trace.csv", &trace_csv(out.trace.as_ref()))?;
    write(dir, "summary.json", &summary_json(out))?;
    if !out.messages.is_empty() {
        let mut body = out.messages.join("\n");
        body.push('\n');
        write(dir, "messages.jsonl", &body)?;
    }
    Ok(())
}
