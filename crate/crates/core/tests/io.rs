mod common;

use common::{data_dir, fixture, spec};
use lem::io::{
    emit_results, generate_scenario, load_scenario, write_scenario, GeneratorSpec, IoError,
    RunOutput,
};
use lem::market::run_clearing;
use lem::model::Scenario;
use lem::oracle::evaluate_network;
use proptest::prelude::*;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

fn copy_fixture(name: &str, to: &Path) {
    for e in fs::read_dir(data_dir().join(name)).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

fn run6() -> &'static (Scenario, RunOutput) {
    static RUN: OnceLock<(Scenario, RunOutput)> = OnceLock::new();
    RUN.get_or_init(|| {
        let scn = fixture("feeder6");
        let res = run_clearing(&scn).unwrap();
        (scn, RunOutput::from(&res))
    })
}

fn per_bus(scn: &Scenario) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for p in &scn.prosumers {
        *m.entry(p.bus_id).or_insert(0) += 1;
    }
    m
}

#[test]
fn bundled_fixtures_load() {
    let scn = fixture("feeder6");
    assert_eq!(scn.network.n_buses(), 6);
    assert!(!scn.prosumers.is_empty());
    let big = fixture("ieee69");
    assert_eq!(
        (big.network.n_buses(), big.network.n_lines(), big.horizon),
        (69, 68, 24)
    );
}

#[test]
fn unknown_bus_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixture("feeder6", dir.path());
    let path = dir.path().join("lines.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("6,99,0.5,0.4,1.0\n");
    fs::write(&path, text).unwrap();
    let err = load_scenario(dir.path()).unwrap_err();
    assert_eq!(err.to_string(), "unknown bus 99 at lines.csv:7");
}

#[test]
fn malformed_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixture("feeder6", dir.path());
    let path = dir.path().join("buses.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("7,low,1.05,false\n");
    fs::write(&path, text).unwrap();
    match load_scenario(dir.path()).unwrap_err() {
        IoError::Parse { file, line, .. } => assert_eq!((file.as_str(), line), ("buses.csv", 8)),
        other => panic!("{other}"),
    }

    copy_fixture("feeder6", dir.path());
    fs::remove_file(dir.path().join("profiles.csv")).unwrap();
    assert!(
        matches!(load_scenario(dir.path()), Err(IoError::Missing(p)) if p.ends_with("profiles.csv"))
    );
}

#[test]
fn bundled_fixtures_round_trip() {
    for name in ["feeder6", "ieee69"] {
        let scn = fixture(name);
        let dir = tempfile::tempdir().unwrap();
        write_scenario(&scn, dir.path()).unwrap();
        assert_eq!(load_scenario(dir.path()).unwrap(), scn, "{name}");
    }
}

#[test]
fn same_seed_same_files() {
    let s = spec("ieee69");
    let a = generate_scenario(&s).unwrap();
    assert_eq!(a, generate_scenario(&s).unwrap());
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_scenario(&a, d1.path()).unwrap();
    write_scenario(&a, d2.path()).unwrap();
    for e in fs::read_dir(d1.path()).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(
            fs::read(d1.path().join(&name)).unwrap(),
            fs::read(d2.path().join(&name)).unwrap()
        );
    }
}

#[test]
fn generated_fixture_specs_reproduce_the_bundled_data() {
    for name in ["feeder6", "ieee69"] {
        assert_eq!(
            generate_scenario(&spec(name)).unwrap(),
            fixture(name),
            "{name}"
        );
    }
}

#[test]
fn penetration_levels_nest() {
    let base = spec("ieee69");
    let at = |p: f64| {
        generate_scenario(&GeneratorSpec {
            prosumer_penetration: p,
            ..base.clone()
        })
        .unwrap()
    };
    assert!(at(0.0).prosumers.is_empty());
    let (lo, mid, hi) = (per_bus(&at(0.45)), per_bus(&at(0.6)), per_bus(&at(0.75)));
    for (bus, n) in &lo {
        assert!(mid.get(bus).copied().unwrap_or(0) >= *n, "bus {bus}");
    }
    for (bus, n) in &mid {
        assert!(hi.get(bus).copied().unwrap_or(0) >= *n, "bus {bus}");
    }
    assert!(hi.values().sum::<usize>() > lo.values().sum::<usize>());
}

#[test]
fn bad_specs_are_rejected() {
    let mut s = GeneratorSpec {
        prosumer_penetration: 1.5,
        ..Default::default()
    };
    assert!(matches!(generate_scenario(&s), Err(IoError::Spec(_))));
    s.prosumer_penetration = 0.5;
    s.devices.ev = -0.1;
    assert!(matches!(generate_scenario(&s), Err(IoError::Spec(_))));
}

#[test]
fn empty_market_is_a_load_flow() {
    let scn = generate_scenario(&GeneratorSpec {
        prosumer_penetration: 0.0,
        ..spec("feeder6")
    })
    .unwrap();
    let res = run_clearing(&scn).unwrap();
    let flow = evaluate_network(&scn, &[]).unwrap();
    for t in 0..scn.horizon {
        assert!(
            (res.p_loss[t] - flow.p_loss[t]).abs() <= 1e-6 * (1.0 + flow.p_loss[t]),
            "hour {t}"
        );
    }

    let dir = tempfile::tempdir().unwrap();
    emit_results(&RunOutput::from(&res), dir.path()).unwrap();
    let sched = fs::read_to_string(dir.path().join("schedules.csv")).unwrap();
    assert_eq!(sched, "prosumer,device,t,p,q,soc,status\n");
}

#[test]
fn six_bus_run_emits_the_result_files() {
    let (scn, out) = run6();
    let dir = tempfile::tempdir().unwrap();
    emit_results(out, dir.path()).unwrap();
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["dlmp.csv", "schedules.csv", "summary.json", "trace.csv"]
    );
    let dlmp = fs::read_to_string(dir.path().join("dlmp.csv")).unwrap();
    assert_eq!(
        dlmp.lines().count() - 1,
        scn.network.n_buses() * scn.horizon
    );

    let again = tempfile::tempdir().unwrap();
    emit_results(out, again.path()).unwrap();
    for n in &names {
        assert_eq!(
            fs::read(dir.path().join(n)).unwrap(),
            fs::read(again.path().join(n)).unwrap(),
            "{n}"
        );
    }
}

/// Prosumer and device costs rebuilt from the emitted CSV files alone.
#[test]
fn summary_costs_follow_from_the_files() {
    let (scn, out) = run6();
    let dir = tempfile::tempdir().unwrap();
    emit_results(out, dir.path()).unwrap();

    let mut price: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(dir.path().join("dlmp.csv")).unwrap();
    for rec in rdr.records() {
        let r = rec.unwrap();
        price.insert(
            (r[0].parse().unwrap(), r[1].parse().unwrap()),
            r[2].parse().unwrap(),
        );
    }
    let dt = scn.dt;
    let mut prosumer: BTreeMap<String, f64> = BTreeMap::new();
    let mut devices = 0.0;
    let mut rdr = csv::Reader::from_path(dir.path().join("schedules.csv")).unwrap();
    for rec in rdr.records() {
        let r = rec.unwrap();
        let pros = scn.prosumers.iter().find(|p| p.id == r[0]).unwrap();
        let (dev, t, p): (&str, usize, f64) = (&r[1], r[2].parse().unwrap(), r[3].parse().unwrap());
        let cost = if dev == "net" {
            price[&(pros.bus_id, t)] * dt * p
        } else if let Some(k) = dev.strip_prefix("bess").or(dev.strip_prefix("ev")) {
            let k: usize = k.parse().unwrap();
            let c = pros.storages[k].throughput_cost * p.abs() * dt;
            devices += c;
            c
        } else if let Some(k) = dev.strip_prefix("fl") {
            let c = pros.fls[k.parse::<usize>().unwrap()].discomfort_cost * p.abs() * dt;
            devices += c;
            c
        } else {
            0.0
        };
        *prosumer.entry(r[0].to_string()).or_insert(0.0) += cost;
    }

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    let costs = &summary["costs"];
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + b.abs());
    assert!(
        close(devices, costs["devices"].as_f64().unwrap()),
        "{devices} vs {}",
        costs["devices"]
    );
    for (id, c) in &prosumer {
        let reported = costs["prosumers"][id].as_f64().unwrap();
        assert!(close(*c, reported), "{id}: {c} vs {reported}");
    }
    let parts = ["lmo", "dso", "devices"].map(|k| costs[k].as_f64().unwrap());
    assert!(close(parts.iter().sum(), costs["total"].as_f64().unwrap()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_scenarios_round_trip(seed in any::<u64>(), pen in 0.0f64..=1.0, big in any::<bool>()) {
        let scn = generate_scenario(&GeneratorSpec {
            seed,
            prosumer_penetration: pen,
            ..spec(if big { "ieee69" } else { "feeder6" })
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_scenario(&scn, dir.path()).unwrap();
        prop_assert_eq!(load_scenario(dir.path()).unwrap(), scn);
    }
}
