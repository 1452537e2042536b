mod common;

use common::{bus, chain, fixture, json_max_rel_diff, line};
use lem::model::{
    from_per_unit, reactive_from_pf, to_per_unit, validate_network, BackgroundLoad, ModelError,
    NetworkIssue, NetworkModel, Units,
};
use proptest::prelude::*;

#[test]
fn minimal_feeder_passes() {
    assert!(validate_network(&chain(2, 0.01, 0.02, 1.0)).is_ok());
}

#[test]
fn triangle_is_rejected() {
    let mut net = chain(3, 0.01, 0.02, 1.0);
    net.lines.push(line(3, 1, 0.01, 0.02, 1.0));
    let rep = validate_network(&net);
    assert!(rep.has(&NetworkIssue::Cycle));
    assert!(rep.to_string().contains("cycle detected"));
}

#[test]
fn bundled_feeders_pass() {
    for name in ["feeder6", "ieee69"] {
        let scn = fixture(name);
        let rep = validate_network(&scn.network);
        assert!(rep.is_ok(), "{name}: {rep}");
    }
    let net = fixture("ieee69").network;
    assert_eq!((net.n_buses(), net.n_lines()), (69, 68));
}

fn corpus() -> Vec<NetworkModel> {
    vec![
        chain(2, 0.01, 0.02, 1.0),
        chain(7, 0.01, 0.02, 1.0),
        fixture("feeder6").network,
        fixture("ieee69").network,
    ]
}

#[test]
fn seeded_defects_are_named() {
    for net in corpus() {
        let n = net.buses.len();

        // close a loop between the last bus and the PCC
        let mut cyc = net.clone();
        let last = cyc.buses[n - 1].id;
        cyc.lines.push(line(last, cyc.buses[0].id, 0.01, 0.01, 1.0));
        if n > 2 {
            let rep = validate_network(&cyc);
            assert!(rep.has(&NetworkIssue::Cycle), "{rep}");
        }

        let mut dup = net.clone();
        dup.buses[n - 1].is_pcc = true;
        let rep = validate_network(&dup);
        assert!(
            rep.issues
                .iter()
                .any(|i| matches!(i, NetworkIssue::MultiplePcc(_))),
            "{rep}"
        );
        assert!(rep.to_string().contains("multiple PCC"));

        let mut neg = net.clone();
        neg.lines[0].r = -0.1;
        let rep = validate_network(&neg);
        assert!(rep.has(&NetworkIssue::NegativeImpedance(0)), "{rep}");
        assert!(rep.to_string().contains("negative r"));
    }
}

#[test]
fn missing_pcc_and_disconnected_bus() {
    let mut net = chain(3, 0.01, 0.02, 1.0);
    net.buses[0].is_pcc = false;
    assert!(validate_network(&net).has(&NetworkIssue::NoPcc));

    let mut net = chain(3, 0.01, 0.02, 1.0);
    net.buses.push(bus(9, false));
    net.lines.push(line(2, 3, 0.01, 0.02, 1.0));
    let rep = validate_network(&net);
    assert!(rep.has(&NetworkIssue::Disconnected(9)), "{rep}");
}

#[test]
fn per_unit_examples() {
    let mut scn = common::scenario(chain(2, 0.0, 0.0, 1.0), Vec::new(), vec![10.0]);
    scn.units = Units::Physical;
    scn.background.push(BackgroundLoad {
        bus_id: 2,
        p: vec![0.1],
        pf: 1.0,
    });
    let pu = to_per_unit(&scn).unwrap();
    assert!((pu.background[0].p[0] - 0.1).abs() < 1e-15);
    assert_eq!(pu.network.lines[0].r, 0.0);

    scn.network.base_mva = 10.0;
    scn.network.base_kv = 12.66;
    scn.network.lines[0].r = 0.5;
    let pu = to_per_unit(&scn).unwrap();
    let expected = 0.5 * 10.0 / (12.66 * 12.66);
    assert!((pu.network.lines[0].r - expected).abs() < 1e-15);
    assert!((pu.network.lines[0].r - 0.0312).abs() < 5e-5);
    assert!((pu.background[0].p[0] - 0.01).abs() < 1e-15);

    // already per-unit input is left alone
    assert_eq!(to_per_unit(&pu).unwrap(), pu);

    scn.network.base_kv = 0.0;
    assert!(matches!(to_per_unit(&scn), Err(ModelError::Base { .. })));
}

#[test]
fn reactive_examples() {
    assert_eq!(reactive_from_pf(1.0, 1.0).unwrap(), 0.0);
    assert_eq!(reactive_from_pf(0.0, 0.85).unwrap(), 0.0);
    let expected = 0.85f64.acos().tan();
    assert!((reactive_from_pf(1.0, 0.85).unwrap() - expected).abs() < 1e-12);
    assert!((expected - 0.6197).abs() < 1e-4);
    assert!(reactive_from_pf(1.0, 0.0).is_err());
    assert!(reactive_from_pf(1.0, 1.2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reactive_decreases_with_pf(p in 0.001f64..10.0, a in 0.05f64..1.0, b in 0.05f64..1.0) {
        prop_assume!(a < b);
        prop_assert!(reactive_from_pf(p, a).unwrap() > reactive_from_pf(p, b).unwrap());
    }

    #[test]
    fn per_unit_round_trip(mva in 0.1f64..100.0, kv in 0.4f64..150.0, which in 0usize..2) {
        let mut scn = fixture(["feeder6", "ieee69"][which]);
        scn.network.base_mva = mva;
        scn.network.base_kv = kv;
        let back = from_per_unit(&to_per_unit(&scn).unwrap()).unwrap();
        let a = serde_json::to_value(&scn).unwrap();
        let b = serde_json::to_value(&back).unwrap();
        prop_assert!(json_max_rel_diff(&a, &b) <= 1e-12);
    }
}
