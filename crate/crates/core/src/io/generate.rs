//! Seeded synthetic scenarios on built-in feeders.
//!
//! Every load bus is split into customers of `customer_kw` peak. Each
//! customer draws one uniform deciding participation and one per device
//! class, plus EV arrival and departure times. The draws do not depend on the
//! penetration, so a higher penetration activates a superset of customers.
//! Active customers at a bus are merged into one aggregator prosumer; the rest
//! stay as background load, with uncontrolled EV charging from arrival.

use super::IoError;
use crate::model::{
    reactive_from_pf, AdmmConfig, BackgroundLoad, Bus, FlexibleLoad, Line, NetworkModel, Profiles,
    Prosumer, PvUnit, Scenario, StorageDevice, StorageKind, Units,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Feeder6,
    Ieee69,
}

/// Probability that an active customer owns each device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceMix {
    pub pv: f64,
    pub bess: f64,
    pub ev: f64,
    pub fl: f64,
}

impl Default for DeviceMix {
    fn default() -> Self {
        Self {
            pv: 1.0,
            bess: 1.0,
            ev: 1.0,
            fl: 1.0,
        }
    }
}

/// Per-customer device sizes, in kW, kWh and currency per MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CustomerDevices {
    pub pv_kw: f64,
    pub inverter_kva: f64,
    pub pv_pf: f64,
    pub bess_kw: f64,
    pub bess_kwh: f64,
    pub bess_eta: f64,
    pub bess_cost: f64,
    pub ev_kw: f64,
    pub ev_kwh: f64,
    pub ev_eta: f64,
    pub ev_cost: f64,
    /// Arrival energy and departure target as fractions of capacity.
    pub ev_arrive_soc: f64,
    pub ev_target_soc: f64,
    pub arrive_mean: f64,
    pub arrive_sd: f64,
    pub depart_mean: f64,
    pub depart_sd: f64,
    pub fl_share: f64,
    pub fl_hours: usize,
    pub fl_energy_floor: f64,
    pub fl_cost: f64,
}

impl Default for CustomerDevices {
    fn default() -> Self {
        Self {
            pv_kw: 4.0,
            inverter_kva: 4.4,
            pv_pf: 0.95,
            bess_kw: 3.0,
            bess_kwh: 10.0,
            bess_eta: 0.95,
            bess_cost: 8.0,
            ev_kw: 3.3,
            ev_kwh: 30.0,
            ev_eta: 0.92,
            ev_cost: 4.0,
            ev_arrive_soc: 0.4,
            ev_target_soc: 0.8,
            arrive_mean: 18.0,
            arrive_sd: 2.0,
            depart_mean: 7.0,
            depart_sd: 1.0,
            fl_share: 0.05,
            fl_hours: 6,
            fl_energy_floor: 0.95,
            fl_cost: 2.0,
        }
    }
}

/// Hourly shapes. Price runs from `price_min` to `price_max` (currency per
/// MWh); loss cost is the price times `loss_cost_factor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileShape {
    pub price_min: f64,
    pub price_max: f64,
    pub loss_cost_factor: f64,
    /// Multiplies every nominal bus load.
    pub load_factor: f64,
}

impl Default for ProfileShape {
    fn default() -> Self {
        Self {
            price_min: 22.0,
            price_max: 58.0,
            loss_cost_factor: 1.0,
            load_factor: 0.85,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub name: String,
    pub seed: u64,
    pub template: Template,
    /// Fraction of customers that are active prosumers.
    pub prosumer_penetration: f64,
    pub customer_kw: f64,
    pub devices: DeviceMix,
    pub customer: CustomerDevices,
    pub profile: ProfileShape,
    pub horizon: usize,
    pub admm: AdmmConfig,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            name: "generated".into(),
            seed: 1,
            template: Template::Feeder6,
            prosumer_penetration: 0.3,
            customer_kw: 10.0,
            devices: DeviceMix::default(),
            customer: CustomerDevices::default(),
            profile: ProfileShape::default(),
            horizon: 24,
            admm: AdmmConfig::default(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), IoError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(IoError::Spec(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("prosumer_penetration", self.prosumer_penetration)?;
        let d = &self.devices;
        for (n, v) in [
            ("devices.pv", d.pv),
            ("devices.bess", d.bess),
            ("devices.ev", d.ev),
            ("devices.fl", d.fl),
        ] {
            unit(n, v)?;
        }
        if !(self.customer_kw > 0.0) || self.horizon == 0 {
            return Err(IoError::Spec(
                "customer_kw and horizon must be positive".into(),
            ));
        }
        let c = &self.customer;
        if !(c.ev_arrive_soc <= c.ev_target_soc && c.ev_target_soc <= 1.0 && c.ev_arrive_soc >= 0.0)
        {
            return Err(IoError::Spec(
                "need 0 ≤ ev_arrive_soc ≤ ev_target_soc ≤ 1".into(),
            ));
        }
        if self.profile.price_min > self.profile.price_max {
            return Err(IoError::Spec("price_min above price_max".into()));
        }
        Ok(())
    }
}

/// Relative price level per hour of day, 0 at the trough and 1 at the peak.
/// No two hours share a level.
const PRICE_SHAPE: [f64; 24] = [
    0.16, 0.09, 0.04, 0.0, 0.06, 0.13, 0.29, 0.44, 0.52, 0.49, 0.46, 0.42, 0.39, 0.35, 0.37, 0.41,
    0.55, 0.76, 0.93, 1.0, 0.88, 0.69, 0.48, 0.26,
];

const LOAD_SHAPE: [f64; 24] = [
    0.62, 0.58, 0.56, 0.55, 0.56, 0.6, 0.68, 0.76, 0.8, 0.82, 0.83, 0.84, 0.83, 0.82, 0.82, 0.84,
    0.88, 0.95, 1.0, 0.99, 0.95, 0.88, 0.78, 0.68,
];

const PV_SHAPE: [f64; 24] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.05, 0.18, 0.38, 0.58, 0.76, 0.9, 1.0, 0.97, 0.86, 0.7, 0.5,
    0.28, 0.09, 0.0, 0.0, 0.0, 0.0, 0.0,
];

/// `(from, to, r Ω, x Ω, P kW, Q kvar)` with the load at `to`.
const IEEE69: [(usize, usize, f64, f64, f64, f64); 68] = [
    (1, 2, 0.0005, 0.0012, 0.0, 0.0),
    (2, 3, 0.0005, 0.0012, 0.0, 0.0),
    (3, 4, 0.0015, 0.0036, 0.0, 0.0),
    (4, 5, 0.0251, 0.0294, 0.0, 0.0),
    (5, 6, 0.3660, 0.1864, 2.6, 2.2),
    (6, 7, 0.3811, 0.1941, 40.4, 30.0),
    (7, 8, 0.0922, 0.0470, 75.0, 54.0),
    (8, 9, 0.0493, 0.0251, 30.0, 22.0),
    (9, 10, 0.8190, 0.2707, 28.0, 19.0),
    (10, 11, 0.1872, 0.0619, 145.0, 104.0),
    (11, 12, 0.7114, 0.2351, 145.0, 104.0),
    (12, 13, 1.0300, 0.3400, 8.0, 5.5),
    (13, 14, 1.0440, 0.3450, 8.0, 5.5),
    (14, 15, 1.0580, 0.3496, 0.0, 0.0),
    (15, 16, 0.1966, 0.0650, 45.5, 30.0),
    (16, 17, 0.3744, 0.1238, 60.0, 35.0),
    (17, 18, 0.0047, 0.0016, 60.0, 35.0),
    (18, 19, 0.3276, 0.1083, 0.0, 0.0),
    (19, 20, 0.2106, 0.0690, 1.0, 0.6),
    (20, 21, 0.3416, 0.1129, 114.0, 81.0),
    (21, 22, 0.0140, 0.0046, 5.0, 3.5),
    (22, 23, 0.1591, 0.0526, 0.0, 0.0),
    (23, 24, 0.3463, 0.1145, 28.0, 20.0),
    (24, 25, 0.7488, 0.2475, 0.0, 0.0),
    (25, 26, 0.3089, 0.1021, 14.0, 10.0),
    (26, 27, 0.1732, 0.0572, 14.0, 10.0),
    (3, 28, 0.0044, 0.0108, 26.0, 18.6),
    (28, 29, 0.0640, 0.1565, 26.0, 18.6),
    (29, 30, 0.3978, 0.1315, 0.0, 0.0),
    (30, 31, 0.0702, 0.0232, 0.0, 0.0),
    (31, 32, 0.3510, 0.1160, 0.0, 0.0),
    (32, 33, 0.8390, 0.2816, 14.0, 10.0),
    (33, 34, 1.7080, 0.5646, 19.5, 14.0),
    (34, 35, 1.4740, 0.4873, 6.0, 4.0),
    (3, 36, 0.0044, 0.0108, 26.0, 18.55),
    (36, 37, 0.0640, 0.1565, 26.0, 18.55),
    (37, 38, 0.1053, 0.1230, 0.0, 0.0),
    (38, 39, 0.0304, 0.0355, 24.0, 17.0),
    (39, 40, 0.0018, 0.0021, 24.0, 17.0),
    (40, 41, 0.7283, 0.8509, 1.2, 1.0),
    (41, 42, 0.3100, 0.3623, 0.0, 0.0),
    (42, 43, 0.0410, 0.0478, 6.0, 4.3),
    (43, 44, 0.0092, 0.0116, 0.0, 0.0),
    (44, 45, 0.1089, 0.1373, 39.22, 26.3),
    (45, 46, 0.0009, 0.0012, 39.22, 26.3),
    (4, 47, 0.0034, 0.0084, 0.0, 0.0),
    (47, 48, 0.0851, 0.2083, 79.0, 56.4),
    (48, 49, 0.2898, 0.7091, 384.7, 274.5),
    (49, 50, 0.0822, 0.2011, 384.7, 274.5),
    (8, 51, 0.0928, 0.0473, 40.5, 28.3),
    (51, 52, 0.3319, 0.1114, 3.6, 2.7),
    (9, 53, 0.1740, 0.0886, 4.35, 3.5),
    (53, 54, 0.2030, 0.1034, 26.4, 19.0),
    (54, 55, 0.2842, 0.1447, 24.0, 17.2),
    (55, 56, 0.2813, 0.1433, 0.0, 0.0),
    (56, 57, 1.5900, 0.5337, 0.0, 0.0),
    (57, 58, 0.7837, 0.2630, 0.0, 0.0),
    (58, 59, 0.3042, 0.1006, 100.0, 72.0),
    (59, 60, 0.3861, 0.1172, 0.0, 0.0),
    (60, 61, 0.5075, 0.2585, 1244.0, 888.0),
    (61, 62, 0.0974, 0.0496, 32.0, 23.0),
    (62, 63, 0.1450, 0.0738, 0.0, 0.0),
    (63, 64, 0.7105, 0.3619, 227.0, 162.0),
    (64, 65, 1.0410, 0.5302, 59.0, 42.0),
    (11, 66, 0.2012, 0.0611, 18.0, 13.0),
    (66, 67, 0.0047, 0.0014, 18.0, 13.0),
    (12, 68, 0.7394, 0.2444, 28.0, 20.0),
    (68, 69, 0.0047, 0.0016, 28.0, 20.0),
];

const FEEDER6: [(usize, usize, f64, f64, f64, f64); 5] = [
    (1, 2, 1.5, 0.9, 150.0, 90.0),
    (2, 3, 2.4, 1.35, 200.0, 120.0),
    (3, 4, 3.0, 1.5, 120.0, 70.0),
    (4, 5, 3.6, 1.8, 180.0, 110.0),
    (3, 6, 2.7, 1.5, 160.0, 100.0),
];

struct TemplateData {
    base_mva: f64,
    base_kv: f64,
    vmin: f64,
    vmax: f64,
    rows: &'static [(usize, usize, f64, f64, f64, f64)],
}

fn template(t: Template) -> TemplateData {
    match t {
        Template::Feeder6 => TemplateData {
            base_mva: 1.0,
            base_kv: 12.66,
            vmin: 0.9,
            vmax: 1.05,
            rows: &FEEDER6,
        },
        Template::Ieee69 => TemplateData {
            base_mva: 10.0,
            base_kv: 12.66,
            vmin: 0.9,
            vmax: 1.05,
            rows: &IEEE69,
        },
    }
}

/// Twice the apparent power each line carries at nominal load, in MVA, with a
/// floor for lines that carry almost nothing.
fn line_ratings(rows: &[(usize, usize, f64, f64, f64, f64)]) -> Vec<f64> {
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        children.entry(r.0).or_default().push(i);
    }
    fn down(
        i: usize,
        rows: &[(usize, usize, f64, f64, f64, f64)],
        ch: &BTreeMap<usize, Vec<usize>>,
    ) -> (f64, f64) {
        let (mut p, mut q) = (rows[i].4, rows[i].5);
        for &c in ch.get(&rows[i].1).map(|v| v.as_slice()).unwrap_or(&[]) {
            let (cp, cq) = down(c, rows, ch);
            p += cp;
            q += cq;
        }
        (p, q)
    }
    (0..rows.len())
        .map(|i| {
            let (p, q) = down(i, rows, &children);
            (2.0 * p.hypot(q) / 1000.0).max(0.1)
        })
        .collect()
}

fn hourly(shape: &[f64; 24], horizon: usize) -> Vec<f64> {
    (0..horizon).map(|t| shape[t % 24]).collect()
}

struct Draw {
    active: f64,
    device: [f64; 4],
    arrive: usize,
}

fn truncated_hour(rng: &mut ChaCha8Rng, normal: &Normal<f64>, lo: f64, hi: f64) -> usize {
    for _ in 0..64 {
        let v = normal.sample(rng);
        if (lo..=hi).contains(&v) {
            return v.round() as usize;
        }
    }
    normal.mean().round() as usize
}

/// Builds a scenario in physical units (MW, MWh, Ω, currency per MWh).
pub fn generate_scenario(spec: &GeneratorSpec) -> Result<Scenario, IoError> {
    spec.validate()?;
    let td = template(spec.template);
    let th = spec.horizon;
    let c = &spec.customer;
    let lf = spec.profile.load_factor;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let arrive = Normal::new(c.arrive_mean, c.arrive_sd.max(1e-9))
        .map_err(|e| IoError::Spec(e.to_string()))?;
    let depart = Normal::new(c.depart_mean, c.depart_sd.max(1e-9))
        .map_err(|e| IoError::Spec(e.to_string()))?;

    let ratings = line_ratings(td.rows);
    let mut buses = vec![Bus {
        id: 1,
        vmin: 1.0,
        vmax: 1.0,
        is_pcc: true,
    }];
    let mut lines = Vec::new();
    for (row, s) in td.rows.iter().zip(&ratings) {
        buses.push(Bus {
            id: row.1,
            vmin: td.vmin,
            vmax: td.vmax,
            is_pcc: false,
        });
        lines.push(Line {
            from: row.0,
            to: row.1,
            r: row.2,
            x: row.3,
            s_max: *s,
        });
    }

    let load_scale = hourly(&LOAD_SHAPE, th);
    let pv_cf = hourly(&PV_SHAPE, th);
    let prof = &spec.profile;
    let wem: Vec<f64> = hourly(&PRICE_SHAPE, th)
        .iter()
        .map(|s| prof.price_min + (prof.price_max - prof.price_min) * s)
        .collect();
    let loss_cost = wem.iter().map(|w| w * prof.loss_cost_factor).collect();

    let mut prosumers = Vec::new();
    let mut background = Vec::new();
    for row in td.rows {
        let (bus, p_kw, q_kvar) = (row.1, row.4 * lf, row.5 * lf);
        if p_kw <= 0.0 {
            continue;
        }
        let pf = p_kw / p_kw.hypot(q_kvar);
        let n = (p_kw / spec.customer_kw).ceil() as usize;
        let draws: Vec<Draw> = (0..n)
            .map(|_| {
                let active = rng.random::<f64>();
                let device = [rng.random(), rng.random(), rng.random(), rng.random()];
                let (lo, hi) = (
                    c.arrive_mean - 2.0 * c.arrive_sd,
                    c.arrive_mean + 2.0 * c.arrive_sd,
                );
                let arrive = truncated_hour(&mut rng, &arrive, lo, hi).min(th.saturating_sub(1));
                // Drawn to keep the stream aligned; departures fall past the horizon.
                let (lo, hi) = (
                    c.depart_mean - 2.0 * c.depart_sd,
                    c.depart_mean + 2.0 * c.depart_sd,
                );
                truncated_hour(&mut rng, &depart, lo, hi);
                Draw {
                    active,
                    device,
                    arrive,
                }
            })
            .collect();
        let active: Vec<&Draw> = draws
            .iter()
            .filter(|d| d.active < spec.prosumer_penetration)
            .collect();
        let passive_evs: Vec<&Draw> = draws
            .iter()
            .filter(|d| d.active >= spec.prosumer_penetration && d.device[2] < spec.devices.ev)
            .collect();
        let share = active.len() as f64 / n as f64;

        let mut bg = vec![0.0; th];
        for (t, v) in bg.iter_mut().enumerate() {
            *v = (1.0 - share) * p_kw / 1000.0 * load_scale[t];
        }
        for d in passive_evs {
            let mut need = (c.ev_target_soc - c.ev_arrive_soc) * c.ev_kwh / c.ev_eta;
            for v in bg.iter_mut().skip(d.arrive) {
                if need <= 0.0 {
                    break;
                }
                let p = c.ev_kw.min(need);
                *v += p / 1000.0;
                need -= p;
            }
        }
        if bg.iter().any(|&v| v > 0.0) {
            background.push(BackgroundLoad {
                bus_id: bus,
                p: bg,
                pf,
            });
        }
        if active.is_empty() {
            continue;
        }

        let peak = share * p_kw / 1000.0;
        let baseline: Vec<f64> = load_scale.iter().map(|s| peak * s).collect();
        let probs = [
            spec.devices.pv,
            spec.devices.bess,
            spec.devices.ev,
            spec.devices.fl,
        ];
        let count = |k: usize| active.iter().filter(|d| d.device[k] < probs[k]).count() as f64;
        let mut pros = Prosumer {
            id: format!("agg{bus}"),
            bus_id: bus,
            baseline_load: baseline.clone(),
            pf_load: pf,
            pvs: Vec::new(),
            storages: Vec::new(),
            fls: Vec::new(),
        };
        let n_pv = count(0);
        if n_pv > 0.0 {
            let rating = n_pv * c.pv_kw / 1000.0;
            pros.pvs.push(PvUnit {
                p_forecast: pv_cf.iter().map(|cf| rating * cf).collect(),
                s_inv: n_pv * c.inverter_kva / 1000.0,
                pf: c.pv_pf,
            });
        }
        let n_bess = count(1);
        if n_bess > 0.0 {
            let cap = n_bess * c.bess_kwh / 1000.0;
            pros.storages.push(StorageDevice {
                kind: StorageKind::Bess,
                p_ch_max: n_bess * c.bess_kw / 1000.0,
                p_dch_max: n_bess * c.bess_kw / 1000.0,
                eta_ch: c.bess_eta,
                eta_dch: c.bess_eta,
                e0: 0.5 * cap,
                soc_min: 0.1 * cap,
                soc_max: cap,
                t_arrive: 0,
                t_depart: th - 1,
                e_trip: 0.5 * cap,
                throughput_cost: c.bess_cost,
            });
        }
        // EVs sharing an arrival hour form one fleet device.
        let mut fleets: BTreeMap<usize, f64> = BTreeMap::new();
        for d in active.iter().filter(|d| d.device[2] < spec.devices.ev) {
            *fleets.entry(d.arrive).or_default() += 1.0;
        }
        for (arr, m) in fleets {
            let cap = m * c.ev_kwh / 1000.0;
            let p = m * c.ev_kw / 1000.0;
            let e0 = c.ev_arrive_soc * cap;
            let hours = (th - arr) as f64;
            let reach = e0 + 0.9 * c.ev_eta * p * hours;
            pros.storages.push(StorageDevice {
                kind: StorageKind::Ev,
                p_ch_max: p,
                p_dch_max: p,
                eta_ch: c.ev_eta,
                eta_dch: c.ev_eta,
                e0,
                soc_min: 0.1 * cap,
                soc_max: cap,
                t_arrive: arr,
                // The trip floor applies at the last hour.
                t_depart: th - 1,
                e_trip: (c.ev_target_soc * cap).min(reach),
                throughput_cost: c.ev_cost,
            });
        }
        if count(3) > 0.0 {
            let energy: f64 = baseline.iter().sum();
            pros.fls.push(FlexibleLoad {
                p_fl_max: baseline.iter().map(|b| c.fl_share * b).collect(),
                t_max: c.fl_hours.min(th),
                e_min: c.fl_energy_floor * energy,
                discomfort_cost: c.fl_cost,
            });
        }
        prosumers.push(pros);
    }

    let scn = Scenario {
        name: spec.name.clone(),
        units: Units::Physical,
        network: NetworkModel {
            buses,
            lines,
            base_mva: td.base_mva,
            base_kv: td.base_kv,
        },
        prosumers,
        background,
        horizon: th,
        dt: 1.0,
        profiles: Profiles {
            wem_price: wem,
            loss_cost,
            load_scale,
            pv_cf,
        },
        admm: spec.admm.clone(),
    };
    // Surface any pf rounding issue before callers run the scenario.
    for b in &scn.background {
        reactive_from_pf(1.0, b.pf)?;
    }
    scn.validate()?;
    Ok(scn)
}
