//! Feeder, device and scenario types, validation and per-unit conversion.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("power factor {0} outside (0, 1]")]
    PowerFactor(f64),
    #[error("base values must be positive (base_mva {base_mva}, base_kv {base_kv})")]
    Base { base_mva: f64, base_kv: f64 },
    #[error("invalid network: {0}")]
    Network(ValidationReport),
    #[error("invalid scenario: {}", .0.join("; "))]
    Scenario(Vec<String>),
    #[error("invalid ADMM configuration: {0}")]
    Admm(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub vmin: f64,
    pub vmax: f64,
    pub is_pcc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub s_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub base_mva: f64,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum NetworkIssue {
    DuplicateBus(usize),
    UnknownBus { line: usize, bus: usize },
    NoPcc,
    MultiplePcc(Vec<usize>),
    Cycle,
    Disconnected(usize),
    NegativeImpedance(usize),
    NonPositiveCapacity(usize),
    VoltageBounds(usize),
}

impl fmt::Display for NetworkIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkIssue::DuplicateBus(b) => write!(f, "duplicate bus {b}"),
            NetworkIssue::UnknownBus { line, bus } => {
                write!(f, "line {line} references unknown bus {bus}")
            }
            NetworkIssue::NoPcc => write!(f, "no PCC bus"),
            NetworkIssue::MultiplePcc(ids) => write!(f, "multiple PCC buses {ids:?}"),
            NetworkIssue::Cycle => write!(f, "cycle detected"),
            NetworkIssue::Disconnected(b) => write!(f, "bus {b} is disconnected"),
            NetworkIssue::NegativeImpedance(l) => write!(f, "negative r or x on line {l}"),
            NetworkIssue::NonPositiveCapacity(l) => write!(f, "non-positive capacity on line {l}"),
            NetworkIssue::VoltageBounds(b) => write!(f, "invalid voltage bounds at bus {b}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<NetworkIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, issue: &NetworkIssue) -> bool {
        self.issues.contains(issue)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.issues.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join(", "))
    }
}

/// Radial orientation of a validated feeder. Indices are positions in
/// `NetworkModel::buses` / `lines`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub pcc: usize,
    /// Upstream end of every line.
    pub line_from: Vec<usize>,
    /// Downstream end of every line.
    pub line_to: Vec<usize>,
    /// Line feeding each bus (`None` at the PCC).
    pub parent_line: Vec<Option<usize>>,
    /// Lines leaving each bus downstream.
    pub child_lines: Vec<Vec<usize>>,
    /// Buses in breadth-first order from the PCC.
    pub order: Vec<usize>,
}

/// Checks every network invariant. Radiality is verified by a
/// breadth-first spanning tree rooted at the PCC.
pub fn validate_network(net: &NetworkModel) -> ValidationReport {
    analyze(net).0
}

fn analyze(net: &NetworkModel) -> (ValidationReport, Option<Topology>) {
    let mut issues = Vec::new();
    let mut index = BTreeMap::new();
    for (i, b) in net.buses.iter().enumerate() {
        if index.insert(b.id, i).is_some() {
            issues.push(NetworkIssue::DuplicateBus(b.id));
        }
        if !(b.vmin > 0.0 && b.vmin <= b.vmax) {
            issues.push(NetworkIssue::VoltageBounds(b.id));
        }
    }
    let pccs: Vec<usize> = net
        .buses
        .iter()
        .filter(|b| b.is_pcc)
        .map(|b| b.id)
        .collect();
    match pccs.len() {
        0 => issues.push(NetworkIssue::NoPcc),
        1 => {}
        _ => issues.push(NetworkIssue::MultiplePcc(pccs.clone())),
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); net.buses.len()];
    let mut ends_ok = true;
    for (l, line) in net.lines.iter().enumerate() {
        for bus in [line.from, line.to] {
            if !index.contains_key(&bus) {
                issues.push(NetworkIssue::UnknownBus { line: l, bus });
                ends_ok = false;
            }
        }
        if line.r < 0.0 || line.x < 0.0 || !line.r.is_finite() || !line.x.is_finite() {
            issues.push(NetworkIssue::NegativeImpedance(l));
        }
        if !(line.s_max > 0.0) {
            issues.push(NetworkIssue::NonPositiveCapacity(l));
        }
        if let (Some(&a), Some(&b)) = (index.get(&line.from), index.get(&line.to)) {
            adj[a].push((b, l));
            adj[b].push((a, l));
        }
    }
    if ends_ok && !net.buses.is_empty() && net.lines.len() >= net.buses.len() {
        issues.push(NetworkIssue::Cycle);
    }
    let mut topo = None;
    if pccs.len() == 1 && ends_ok {
        let root = index[&pccs[0]];
        let n = net.buses.len();
        let mut parent_line = vec![None; n];
        let mut seen = vec![false; n];
        let mut line_from = vec![usize::MAX; net.lines.len()];
        let mut line_to = vec![usize::MAX; net.lines.len()];
        let mut used = vec![false; net.lines.len()];
        let mut child_lines = vec![Vec::new(); n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        let mut cycle = false;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, l) in &adj[u] {
                if used[l] {
                    continue;
                }
                used[l] = true;
                if seen[v] {
                    cycle = true;
                    continue;
                }
                seen[v] = true;
                parent_line[v] = Some(l);
                line_from[l] = u;
                line_to[l] = v;
                child_lines[u].push(l);
                queue.push_back(v);
            }
        }
        if cycle && !issues.contains(&NetworkIssue::Cycle) {
            issues.push(NetworkIssue::Cycle);
        }
        for (i, s) in seen.iter().enumerate() {
            if !s {
                issues.push(NetworkIssue::Disconnected(net.buses[i].id));
            }
        }
        topo = Some(Topology {
            pcc: root,
            line_from,
            line_to,
            parent_line,
            child_lines,
            order,
        });
    }
    issues.sort();
    issues.dedup();
    let report = ValidationReport { issues };
    let topo = if report.is_ok() { topo } else { None };
    (report, topo)
}

impl NetworkModel {
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn topology(&self) -> Result<Topology, ModelError> {
        match analyze(self) {
            (_, Some(t)) => Ok(t),
            (r, None) => Err(ModelError::Network(r)),
        }
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }
}

/// `p · tan(acos(pf))`, positive for lagging consumption.
pub fn reactive_from_pf(p: f64, pf: f64) -> Result<f64, ModelError> {
    if !(pf > 0.0 && pf <= 1.0) {
        return Err(ModelError::PowerFactor(pf));
    }
    Ok(p * (1.0 - pf * pf).sqrt() / pf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvUnit {
    pub p_forecast: Vec<f64>,
    pub s_inv: f64,
    pub pf: f64,
}

impl PvUnit {
    /// Hourly cap `min(forecast, pf · s_inv)`.
    pub fn cap(&self, t: usize) -> f64 {
        self.p_forecast[t].min(self.pf * self.s_inv).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageKind {
    Bess,
    Ev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageDevice {
    pub kind: StorageKind,
    pub p_ch_max: f64,
    pub p_dch_max: f64,
    pub eta_ch: f64,
    pub eta_dch: f64,
    /// Energy before the first hour of the window.
    pub e0: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Inclusive hour window `[arrive, depart]`.
    pub t_arrive: usize,
    pub t_depart: usize,
    /// Energy floor at the end of the window.
    pub e_trip: f64,
    pub throughput_cost: f64,
}

impl StorageDevice {
    pub fn window(&self) -> std::ops::RangeInclusive<usize> {
        self.t_arrive..=self.t_depart
    }

    pub fn in_window(&self, t: usize) -> bool {
        t >= self.t_arrive && t <= self.t_depart
    }

    pub fn window_len(&self) -> usize {
        self.t_depart + 1 - self.t_arrive
    }

    /// `soc + (η_ch p_ch − p_dch / η_dch) Δt`
    pub fn soc_step(&self, soc_prev: f64, p_ch: f64, p_dch: f64, dt: f64) -> f64 {
        soc_step(soc_prev, p_ch, p_dch, self.eta_ch, self.eta_dch, dt)
    }
}

pub fn soc_step(soc_prev: f64, p_ch: f64, p_dch: f64, eta_ch: f64, eta_dch: f64, dt: f64) -> f64 {
    soc_prev + (eta_ch * p_ch - p_dch / eta_dch) * dt
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibleLoad {
    pub p_fl_max: Vec<f64>,
    pub t_max: usize,
    pub e_min: f64,
    pub discomfort_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prosumer {
    pub id: String,
    pub bus_id: usize,
    pub baseline_load: Vec<f64>,
    pub pf_load: f64,
    pub pvs: Vec<PvUnit>,
    pub storages: Vec<StorageDevice>,
    pub fls: Vec<FlexibleLoad>,
}

impl Prosumer {
    pub fn has_devices(&self) -> bool {
        !(self.pvs.is_empty() && self.storages.is_empty() && self.fls.is_empty())
    }
}

/// Load that does not take part in the market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundLoad {
    pub bus_id: usize,
    pub p: Vec<f64>,
    pub pf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    pub wem_price: Vec<f64>,
    pub loss_cost: Vec<f64>,
    pub load_scale: Vec<f64>,
    pub pv_cf: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProsumerSolver {
    #[default]
    Exact,
    RelaxRepair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub rho: f64,
    pub rho_prime: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// `None` starts every multiplier at the LMO stationarity value `−λ^WEM Δt`.
    pub lambda_p_init: Option<f64>,
    pub lambda_loss_init: Option<f64>,
    /// Also require `ρ‖p̃(k) − p̃(k−1)‖∞ ≤ ε` in both stopping tests.
    pub dual_residual_check: bool,
    pub prosumer_solver: ProsumerSolver,
    pub mip_gap: f64,
    pub node_limit: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            rho_prime: 1.0,
            eps1: 1e-4,
            eps2: 1e-4,
            max_outer: 100,
            max_inner: 50,
            lambda_p_init: None,
            lambda_loss_init: None,
            dual_residual_check: true,
            prosumer_solver: ProsumerSolver::Exact,
            mip_gap: crate::miqp::DEFAULT_MIP_GAP,
            node_limit: crate::miqp::DEFAULT_NODE_LIMIT,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ModelError::Admm(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        pos("rho", self.rho)?;
        pos("rho_prime", self.rho_prime)?;
        pos("eps1", self.eps1)?;
        pos("eps2", self.eps2)?;
        pos("mip_gap", self.mip_gap)?;
        if self.max_outer == 0 || self.max_inner == 0 || self.node_limit == 0 {
            return Err(ModelError::Admm("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// MW, MVA, MWh, Ω, currency per MWh.
    Physical,
    PerUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub units: Units,
    pub network: NetworkModel,
    pub prosumers: Vec<Prosumer>,
    pub background: Vec<BackgroundLoad>,
    pub horizon: usize,
    pub dt: f64,
    pub profiles: Profiles,
    pub admm: AdmmConfig,
}

impl Scenario {
    pub fn wem_price(&self) -> &[f64] {
        &self.profiles.wem_price
    }

    pub fn loss_cost(&self) -> &[f64] {
        &self.profiles.loss_cost
    }

    /// Every invariant of the network, devices, profiles and configuration.
    pub fn validate(&self) -> Result<(), ModelError> {
        let report = validate_network(&self.network);
        if !report.is_ok() {
            return Err(ModelError::Network(report));
        }
        self.admm.validate()?;
        let mut errs = Vec::new();
        let t = self.horizon;
        if t == 0 {
            errs.push("horizon must be at least 1".to_string());
        }
        if !(self.dt > 0.0) {
            errs.push(format!("dt must be positive, got {}", self.dt));
        }
        let p = &self.profiles;
        for (name, v) in [
            ("wem_price", &p.wem_price),
            ("loss_cost", &p.loss_cost),
            ("load_scale", &p.load_scale),
            ("pv_cf", &p.pv_cf),
        ] {
            if v.len() != t {
                errs.push(format!(
                    "profile {name} has {} entries, horizon is {t}",
                    v.len()
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                errs.push(format!("profile {name} has non-finite values"));
            }
        }
        let buses: BTreeSet<usize> = self.network.buses.iter().map(|b| b.id).collect();
        let mut ids = BTreeSet::new();
        for pr in &self.prosumers {
            let who = format!("prosumer {}", pr.id);
            if !ids.insert(pr.id.clone()) {
                errs.push(format!("duplicate {who}"));
            }
            if !buses.contains(&pr.bus_id) {
                errs.push(format!("{who} at unknown bus {}", pr.bus_id));
            }
            if pr.baseline_load.len() != t || pr.baseline_load.iter().any(|v| !(*v >= 0.0)) {
                errs.push(format!(
                    "{who}: baseline load must be {t} nonnegative values"
                ));
            }
            if !(pr.pf_load > 0.0 && pr.pf_load <= 1.0) {
                errs.push(format!(
                    "{who}: load power factor {} outside (0, 1]",
                    pr.pf_load
                ));
            }
            for (u, pv) in pr.pvs.iter().enumerate() {
                if pv.p_forecast.len() != t || pv.p_forecast.iter().any(|v| !(*v >= 0.0)) {
                    errs.push(format!(
                        "{who} pv {u}: forecast must be {t} nonnegative values"
                    ));
                }
                if !(pv.s_inv > 0.0) || !(pv.pf > 0.0 && pv.pf <= 1.0) {
                    errs.push(format!(
                        "{who} pv {u}: invalid inverter rating or power factor"
                    ));
                }
            }
            for (b, s) in pr.storages.iter().enumerate() {
                errs.extend(
                    storage_issues(s, t)
                        .into_iter()
                        .map(|e| format!("{who} storage {b}: {e}")),
                );
            }
            for (f, fl) in pr.fls.iter().enumerate() {
                if fl.p_fl_max.len() != t || fl.p_fl_max.iter().any(|v| !(*v >= 0.0)) {
                    errs.push(format!(
                        "{who} fl {f}: p_fl_max must be {t} nonnegative values"
                    ));
                }
                if fl.t_max > t || !(fl.e_min >= 0.0) || !(fl.discomfort_cost >= 0.0) {
                    errs.push(format!("{who} fl {f}: invalid t_max, e_min or cost"));
                }
            }
        }
        for bg in &self.background {
            if !buses.contains(&bg.bus_id) {
                errs.push(format!("background load at unknown bus {}", bg.bus_id));
            }
            if bg.p.len() != t || !(bg.pf > 0.0 && bg.pf <= 1.0) {
                errs.push(format!(
                    "background load at bus {}: bad series or power factor",
                    bg.bus_id
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Scenario(errs))
        }
    }

    /// Background active and reactive load per bus index and hour.
    pub fn background_by_bus(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.network.n_buses();
        let mut p = vec![vec![0.0; self.horizon]; n];
        let mut q = vec![vec![0.0; self.horizon]; n];
        for bg in &self.background {
            let i = self.network.bus_index(bg.bus_id).expect("validated bus");
            for t in 0..self.horizon {
                p[i][t] += bg.p[t];
                q[i][t] += reactive_from_pf(bg.p[t], bg.pf).expect("validated pf");
            }
        }
        (p, q)
    }

    /// Reactive demand the DSO forecasts per bus and hour: background load
    /// plus prosumer baseline load at their power factors.
    pub fn reactive_forecast(&self) -> Vec<Vec<f64>> {
        let (_, mut q) = self.background_by_bus();
        for pr in &self.prosumers {
            let i = self.network.bus_index(pr.bus_id).expect("validated bus");
            for t in 0..self.horizon {
                q[i][t] += reactive_from_pf(pr.baseline_load[t], pr.pf_load).expect("validated pf");
            }
        }
        q
    }

    /// Bus index of every prosumer.
    pub fn prosumer_buses(&self) -> Vec<usize> {
        self.prosumers
            .iter()
            .map(|p| self.network.bus_index(p.bus_id).expect("validated bus"))
            .collect()
    }

    /// Total background load per hour.
    pub fn background_total(&self) -> Vec<f64> {
        (0..self.horizon)
            .map(|t| self.background.iter().map(|b| b.p[t]).sum())
            .collect()
    }
}

fn storage_issues(s: &StorageDevice, horizon: usize) -> Vec<String> {
    let mut e = Vec::new();
    if !(s.p_ch_max >= 0.0 && s.p_dch_max >= 0.0) {
        e.push("power limits must be nonnegative".into());
    }
    if !(s.eta_ch > 0.0 && s.eta_ch <= 1.0 && s.eta_dch > 0.0 && s.eta_dch <= 1.0) {
        e.push("efficiencies must lie in (0, 1]".into());
    }
    if !(0.0 <= s.soc_min && s.soc_min <= s.e0 + 1e-12 && s.e0 <= s.soc_max + 1e-12) {
        e.push(format!(
            "need 0 ≤ soc_min ≤ e0 ≤ soc_max, got {} {} {}",
            s.soc_min, s.e0, s.soc_max
        ));
    }
    if s.e_trip > s.soc_max + 1e-12 {
        e.push(format!("e_trip {} exceeds soc_max {}", s.e_trip, s.soc_max));
    }
    if s.t_arrive > s.t_depart || s.t_depart >= horizon {
        e.push(format!(
            "window [{}, {}] outside horizon {horizon}",
            s.t_arrive, s.t_depart
        ));
    } else {
        let reachable = s.e0 + s.eta_ch * s.p_ch_max * s.window_len() as f64;
        if s.e_trip > reachable.min(s.soc_max) + 1e-9 {
            e.push(format!(
                "e_trip {} unreachable (at most {})",
                s.e_trip,
                reachable.min(s.soc_max)
            ));
        }
    }
    if !(s.throughput_cost >= 0.0) {
        e.push("throughput cost must be nonnegative".into());
    }
    e
}

/// Converts a physical-unit scenario to per-unit. Already per-unit input is
/// returned unchanged.
pub fn to_per_unit(raw: &Scenario) -> Result<Scenario, ModelError> {
    convert(raw, Units::PerUnit)
}

pub fn from_per_unit(s: &Scenario) -> Result<Scenario, ModelError> {
    convert(s, Units::Physical)
}

fn convert(s: &Scenario, target: Units) -> Result<Scenario, ModelError> {
    let (mva, kv) = (s.network.base_mva, s.network.base_kv);
    if !(mva > 0.0 && kv > 0.0) {
        return Err(ModelError::Base {
            base_mva: mva,
            base_kv: kv,
        });
    }
    if s.units == target {
        return Ok(s.clone());
    }
    let z_base = kv * kv / mva;
    // factor applied to powers and energies; prices get its inverse
    let (pw, z) = match target {
        Units::PerUnit => (1.0 / mva, 1.0 / z_base),
        Units::Physical => (mva, z_base),
    };
    let price = 1.0 / pw;
    let scale = |v: &[f64], f: f64| v.iter().map(|x| x * f).collect::<Vec<f64>>();
    let mut out = s.clone();
    out.units = target;
    for l in &mut out.network.lines {
        l.r *= z;
        l.x *= z;
        l.s_max *= pw;
    }
    out.profiles.wem_price = scale(&s.profiles.wem_price, price);
    out.profiles.loss_cost = scale(&s.profiles.loss_cost, price);
    for p in &mut out.prosumers {
        p.baseline_load = scale(&p.baseline_load, pw);
        for pv in &mut p.pvs {
            pv.p_forecast = scale(&pv.p_forecast, pw);
            pv.s_inv *= pw;
        }
        for st in &mut p.storages {
            st.p_ch_max *= pw;
            st.p_dch_max *= pw;
            st.e0 *= pw;
            st.soc_min *= pw;
            st.soc_max *= pw;
            st.e_trip *= pw;
            st.throughput_cost *= price;
        }
        for fl in &mut p.fls {
            fl.p_fl_max = scale(&fl.p_fl_max, pw);
            fl.e_min *= pw;
            fl.discomfort_cost *= price;
        }
    }
    for b in &mut out.background {
        b.p = scale(&b.p, pw);
    }
    Ok(out)
}
