//! Scenario directories, synthetic scenario generation and result files.
//!
//! A scenario directory holds `manifest.json` plus the CSV tables described
//! in `docs/formats.md`. Series are stored as per-device ratings multiplied by
//! shared hourly profiles, so a scenario is written back only when its series
//! factor that way.

mod emit;
mod generate;

pub use emit::{emit_results, RunOutput};
pub use generate::{
    generate_scenario, CustomerDevices, DeviceMix, GeneratorSpec, ProfileShape, Template,
};

use crate::model::{
    AdmmConfig, BackgroundLoad, Bus, FlexibleLoad, Line, ModelError, NetworkModel, Profiles,
    Prosumer, PvUnit, Scenario, StorageDevice, StorageKind, Units,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IoError {
    #[error("missing file {0}")]
    Missing(PathBuf),
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{msg} at {file}:{line}")]
    Reference {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("cannot write scenario: {0}")]
    NotRepresentable(String),
    #[error("generator spec: {0}")]
    Spec(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    #[serde(default = "physical")]
    pub units: Units,
    pub base_mva: f64,
    pub base_kv: f64,
    pub horizon: usize,
    #[serde(default = "one")]
    pub dt: f64,
    #[serde(default)]
    pub admm: AdmmConfig,
}

fn physical() -> Units {
    Units::Physical
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BusRow {
    id: usize,
    vmin: f64,
    vmax: f64,
    #[serde(deserialize_with = "flag")]
    is_pcc: bool,
}

fn flag<'de, D: serde::Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" | "" => Ok(false),
        other => Err(serde::de::Error::custom(format!(
            "expected a flag, got `{other}`"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LineRow {
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    smax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LoadRow {
    bus: usize,
    t: usize,
    p: f64,
    pf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProsumerRow {
    id: String,
    bus: usize,
    load_peak: f64,
    pf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PvRow {
    prosumer: String,
    rating: f64,
    s_inv: f64,
    pf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StorageRow {
    prosumer: String,
    kind: StorageKind,
    p_ch_max: f64,
    p_dch_max: f64,
    eta_ch: f64,
    eta_dch: f64,
    e0: f64,
    soc_min: f64,
    soc_max: f64,
    t_arrive: usize,
    t_depart: usize,
    e_trip: f64,
    throughput_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FlRow {
    prosumer: String,
    share: f64,
    t_max: usize,
    e_min: f64,
    discomfort_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProfileRow {
    t: usize,
    wem_price: f64,
    loss_cost: f64,
    load_scale: f64,
    pv_cf: f64,
}

/// Rows with their 1-based line numbers (header is line 1).
fn read_rows<T: DeserializeOwned>(
    dir: &Path,
    name: &str,
    required: bool,
) -> Result<Vec<(usize, T)>, IoError> {
    let path = dir.join(name);
    if !path.exists() {
        return if required {
            Err(IoError::Missing(path))
        } else {
            Ok(Vec::new())
        };
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| io_err(&path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<T>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| IoError::Parse {
            file: name.to_string(),
            line,
            msg: e.to_string(),
        })?;
        out.push((line, row));
    }
    Ok(out)
}

fn write_rows<T: Serialize>(
    dir: &Path,
    name: &str,
    rows: &[T],
    header: &[&str],
) -> Result<(), IoError> {
    let path = dir.join(name);
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .from_path(&path)
        .map_err(|e| io_err(&path, e))?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| io_err(&path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))
}

fn reference(file: &str, line: usize, msg: String) -> IoError {
    IoError::Reference {
        file: file.to_string(),
        line,
        msg,
    }
}

fn scaled(peak: f64, shape: &[f64]) -> Vec<f64> {
    shape.iter().map(|s| peak * s).collect()
}

/// Reads and validates a scenario directory.
pub fn load_scenario(dir: impl AsRef<Path>) -> Result<Scenario, IoError> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.json");
    if !mpath.exists() {
        return Err(IoError::Missing(mpath));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| IoError::Parse {
        file: "manifest.json".into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let th = manifest.horizon;

    let buses: Vec<(usize, BusRow)> = read_rows(dir, "buses.csv", true)?;
    let bus_ids: BTreeMap<usize, usize> = buses.iter().map(|(l, b)| (b.id, *l)).collect();
    let known = |file: &str, line: usize, bus: usize| {
        if bus_ids.contains_key(&bus) {
            Ok(())
        } else {
            Err(reference(file, line, format!("unknown bus {bus}")))
        }
    };
    let lines: Vec<(usize, LineRow)> = read_rows(dir, "lines.csv", true)?;
    for (l, row) in &lines {
        known("lines.csv", *l, row.from)?;
        known("lines.csv", *l, row.to)?;
    }

    let profile_rows: Vec<(usize, ProfileRow)> = read_rows(dir, "profiles.csv", true)?;
    let mut profiles = Profiles {
        wem_price: vec![f64::NAN; th],
        loss_cost: vec![f64::NAN; th],
        load_scale: vec![f64::NAN; th],
        pv_cf: vec![f64::NAN; th],
    };
    for (l, r) in &profile_rows {
        if r.t >= th {
            return Err(reference(
                "profiles.csv",
                *l,
                format!("hour {} outside horizon {th}", r.t),
            ));
        }
        profiles.wem_price[r.t] = r.wem_price;
        profiles.loss_cost[r.t] = r.loss_cost;
        profiles.load_scale[r.t] = r.load_scale;
        profiles.pv_cf[r.t] = r.pv_cf;
    }
    if let Some(t) = profiles.wem_price.iter().position(|v| v.is_nan()) {
        return Err(IoError::Parse {
            file: "profiles.csv".into(),
            line: profile_rows.len() + 1,
            msg: format!("no row for hour {t}"),
        });
    }

    let mut background: Vec<BackgroundLoad> = Vec::new();
    for (l, r) in read_rows::<LoadRow>(dir, "loads.csv", false)? {
        known("loads.csv", l, r.bus)?;
        if r.t >= th {
            return Err(reference(
                "loads.csv",
                l,
                format!("hour {} outside horizon {th}", r.t),
            ));
        }
        let entry = match background.iter_mut().position(|b| b.bus_id == r.bus) {
            Some(i) => &mut background[i],
            None => {
                background.push(BackgroundLoad {
                    bus_id: r.bus,
                    p: vec![0.0; th],
                    pf: r.pf,
                });
                background.last_mut().expect("just pushed")
            }
        };
        if entry.pf != r.pf {
            return Err(reference(
                "loads.csv",
                l,
                format!("bus {} mixes power factors", r.bus),
            ));
        }
        entry.p[r.t] = r.p;
    }

    let mut prosumers: Vec<Prosumer> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (l, r) in read_rows::<ProsumerRow>(dir, "prosumers.csv", true)? {
        known("prosumers.csv", l, r.bus)?;
        if index.insert(r.id.clone(), prosumers.len()).is_some() {
            return Err(reference(
                "prosumers.csv",
                l,
                format!("duplicate prosumer {}", r.id),
            ));
        }
        prosumers.push(Prosumer {
            id: r.id,
            bus_id: r.bus,
            baseline_load: scaled(r.load_peak, &profiles.load_scale),
            pf_load: r.pf,
            pvs: Vec::new(),
            storages: Vec::new(),
            fls: Vec::new(),
        });
    }
    let owner = |file: &str, line: usize, id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| reference(file, line, format!("unknown prosumer {id}")))
    };
    for (l, r) in read_rows::<PvRow>(dir, "pv.csv", false)? {
        let a = owner("pv.csv", l, &r.prosumer)?;
        prosumers[a].pvs.push(PvUnit {
            p_forecast: scaled(r.rating, &profiles.pv_cf),
            s_inv: r.s_inv,
            pf: r.pf,
        });
    }
    for (l, r) in read_rows::<StorageRow>(dir, "storage.csv", false)? {
        let a = owner("storage.csv", l, &r.prosumer)?;
        prosumers[a].storages.push(StorageDevice {
            kind: r.kind,
            p_ch_max: r.p_ch_max,
            p_dch_max: r.p_dch_max,
            eta_ch: r.eta_ch,
            eta_dch: r.eta_dch,
            e0: r.e0,
            soc_min: r.soc_min,
            soc_max: r.soc_max,
            t_arrive: r.t_arrive,
            t_depart: r.t_depart,
            e_trip: r.e_trip,
            throughput_cost: r.throughput_cost,
        });
    }
    for (l, r) in read_rows::<FlRow>(dir, "fl.csv", false)? {
        let a = owner("fl.csv", l, &r.prosumer)?;
        let cap = scaled(r.share, &prosumers[a].baseline_load);
        prosumers[a].fls.push(FlexibleLoad {
            p_fl_max: cap,
            t_max: r.t_max,
            e_min: r.e_min,
            discomfort_cost: r.discomfort_cost,
        });
    }

    let scn = Scenario {
        name: manifest.name,
        units: manifest.units,
        network: NetworkModel {
            buses: buses
                .into_iter()
                .map(|(_, b)| Bus {
                    id: b.id,
                    vmin: b.vmin,
                    vmax: b.vmax,
                    is_pcc: b.is_pcc,
                })
                .collect(),
            lines: lines
                .into_iter()
                .map(|(_, l)| Line {
                    from: l.from,
                    to: l.to,
                    r: l.r,
                    x: l.x,
                    s_max: l.smax,
                })
                .collect(),
            base_mva: manifest.base_mva,
            base_kv: manifest.base_kv,
        },
        prosumers,
        background,
        horizon: th,
        dt: manifest.dt,
        profiles,
        admm: manifest.admm,
    };
    scn.validate()?;
    Ok(scn)
}

/// Finds `k` with `k · shape[t] == series[t]` for every hour, searching a few
/// ulps around the quotient at the largest shape value.
fn factor(series: &[f64], shape: &[f64]) -> Option<f64> {
    if series.iter().all(|&v| v == 0.0) {
        return Some(0.0);
    }
    let (i, &s) = shape.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if s == 0.0 {
        return None;
    }
    let q = series[i] / s;
    let mut cand = q;
    let mut down = q;
    for _ in 0..4 {
        for k in [cand, down] {
            if series.iter().zip(shape).all(|(v, sh)| k * sh == *v) {
                return Some(k);
            }
        }
        cand = next_up(cand);
        down = next_down(down);
    }
    None
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// Writes a scenario directory that [`load_scenario`] reads back unchanged.
pub fn write_scenario(scn: &Scenario, dir: impl AsRef<Path>) -> Result<(), IoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest = Manifest {
        name: scn.name.clone(),
        units: scn.units,
        base_mva: scn.network.base_mva,
        base_kv: scn.network.base_kv,
        horizon: scn.horizon,
        dt: scn.dt,
        admm: scn.admm.clone(),
    };
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&mpath, e))?;
    fs::write(&mpath, text + "\n").map_err(|e| io_err(&mpath, e))?;

    let buses: Vec<BusRow> = scn
        .network
        .buses
        .iter()
        .map(|b| BusRow {
            id: b.id,
            vmin: b.vmin,
            vmax: b.vmax,
            is_pcc: b.is_pcc,
        })
        .collect();
    // The flag reader accepts what serde writes for bool.
    write_rows(dir, "buses.csv", &buses, &["id", "vmin", "vmax", "is_pcc"])?;
    let lines: Vec<LineRow> = scn
        .network
        .lines
        .iter()
        .map(|l| LineRow {
            from: l.from,
            to: l.to,
            r: l.r,
            x: l.x,
            smax: l.s_max,
        })
        .collect();
    write_rows(dir, "lines.csv", &lines, &["from", "to", "r", "x", "smax"])?;

    let p = &scn.profiles;
    let profiles: Vec<ProfileRow> = (0..scn.horizon)
        .map(|t| ProfileRow {
            t,
            wem_price: p.wem_price[t],
            loss_cost: p.loss_cost[t],
            load_scale: p.load_scale[t],
            pv_cf: p.pv_cf[t],
        })
        .collect();
    write_rows(
        dir,
        "profiles.csv",
        &profiles,
        &["t", "wem_price", "loss_cost", "load_scale", "pv_cf"],
    )?;

    let loads: Vec<LoadRow> = scn
        .background
        .iter()
        .flat_map(|b| {
            (0..scn.horizon).map(move |t| LoadRow {
                bus: b.bus_id,
                t,
                p: b.p[t],
                pf: b.pf,
            })
        })
        .collect();
    write_rows(dir, "loads.csv", &loads, &["bus", "t", "p", "pf"])?;

    let not_rep = |what: String| IoError::NotRepresentable(what);
    let mut pros = Vec::new();
    let mut pvs = Vec::new();
    let mut stor = Vec::new();
    let mut fls = Vec::new();
    for pr in &scn.prosumers {
        let peak = factor(&pr.baseline_load, &p.load_scale).ok_or_else(|| {
            not_rep(format!(
                "prosumer {} baseline is not a multiple of load_scale",
                pr.id
            ))
        })?;
        pros.push(ProsumerRow {
            id: pr.id.clone(),
            bus: pr.bus_id,
            load_peak: peak,
            pf: pr.pf_load,
        });
        for pv in &pr.pvs {
            let rating = factor(&pv.p_forecast, &p.pv_cf).ok_or_else(|| {
                not_rep(format!(
                    "prosumer {} pv forecast is not a multiple of pv_cf",
                    pr.id
                ))
            })?;
            pvs.push(PvRow {
                prosumer: pr.id.clone(),
                rating,
                s_inv: pv.s_inv,
                pf: pv.pf,
            });
        }
        for s in &pr.storages {
            stor.push(StorageRow {
                prosumer: pr.id.clone(),
                kind: s.kind,
                p_ch_max: s.p_ch_max,
                p_dch_max: s.p_dch_max,
                eta_ch: s.eta_ch,
                eta_dch: s.eta_dch,
                e0: s.e0,
                soc_min: s.soc_min,
                soc_max: s.soc_max,
                t_arrive: s.t_arrive,
                t_depart: s.t_depart,
                e_trip: s.e_trip,
                throughput_cost: s.throughput_cost,
            });
        }
        for f in &pr.fls {
            let share = factor(&f.p_fl_max, &pr.baseline_load).ok_or_else(|| {
                not_rep(format!(
                    "prosumer {} flexible load is not a share of its baseline",
                    pr.id
                ))
            })?;
            fls.push(FlRow {
                prosumer: pr.id.clone(),
                share,
                t_max: f.t_max,
                e_min: f.e_min,
                discomfort_cost: f.discomfort_cost,
            });
        }
    }
    write_rows(
        dir,
        "prosumers.csv",
        &pros,
        &["id", "bus", "load_peak", "pf"],
    )?;
    write_rows(dir, "pv.csv", &pvs, &["prosumer", "rating", "s_inv", "pf"])?;
    write_rows(
        dir,
        "storage.csv",
        &stor,
        &[
            "prosumer",
            "kind",
            "p_ch_max",
            "p_dch_max",
            "eta_ch",
            "eta_dch",
            "e0",
            "soc_min",
            "soc_max",
            "t_arrive",
            "t_depart",
            "e_trip",
            "throughput_cost",
        ],
    )?;
    write_rows(
        dir,
        "fl.csv",
        &fls,
        &["prosumer", "share", "t_max", "e_min", "discomfort_cost"],
    )
}
