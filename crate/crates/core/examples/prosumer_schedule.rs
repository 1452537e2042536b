//! Schedule one household with PV, a battery, an EV and a flexible load
//! against a day-ahead price, then check every device rule.

use lem::model::{FlexibleLoad, Prosumer, ProsumerSolver, PvUnit, StorageDevice, StorageKind};
use lem::prosumer::{solve_subproblem_iii, validate_schedule, ProsumerInput};

fn bell(t: usize, centre: f64, width: f64) -> f64 {
    (-((t as f64 - centre) / width).powi(2)).exp()
}

fn main() -> anyhow::Result<()> {
    let th = 24;
    let load: Vec<f64> = (0..th).map(|t| 0.4 + 0.5 * bell(t, 19.0, 3.0)).collect();
    let price: Vec<f64> = (0..th)
        .map(|t| 25.0 + 60.0 * bell(t, 18.5, 2.5) + (t % 5) as f64 * 0.1)
        .collect();
    let storage = |kind, p_max, e0, cap, window: (usize, usize), trip| StorageDevice {
        kind,
        p_ch_max: p_max,
        p_dch_max: p_max,
        eta_ch: 0.95,
        eta_dch: 0.95,
        e0,
        soc_min: 0.1 * cap,
        soc_max: cap,
        t_arrive: window.0,
        t_depart: window.1,
        e_trip: trip,
        throughput_cost: 2.0,
    };
    let home = Prosumer {
        id: "home".into(),
        bus_id: 2,
        baseline_load: load.clone(),
        pf_load: 0.95,
        pvs: vec![PvUnit {
            p_forecast: (0..th).map(|t| 1.2 * bell(t, 13.0, 3.0)).collect(),
            s_inv: 1.5,
            pf: 1.0,
        }],
        storages: vec![
            storage(StorageKind::Bess, 0.5, 0.5, 2.0, (0, th - 1), 0.0),
            storage(StorageKind::Ev, 1.0, 1.0, 6.0, (0, 6), 4.0),
        ],
        fls: vec![FlexibleLoad {
            p_fl_max: load.iter().map(|l| 0.05 * l).collect(),
            t_max: 4,
            e_min: 0.95 * load.iter().sum::<f64>(),
            discomfort_cost: 5.0,
        }],
    };

    let sched = solve_subproblem_iii(
        &home,
        &ProsumerInput::price_taker(&price),
        1.0,
        ProsumerSolver::Exact,
        1e-6,
        50_000,
    )?;
    println!(" t  price    net     pv   bess     ev  fl");
    for t in 0..th {
        let st = |k: usize| sched.storage[k].p_ch[t] - sched.storage[k].p_dch[t];
        println!(
            "{t:>2} {:6.2} {:6.3} {:6.3} {:6.3} {:6.3} {:+.3}",
            price[t],
            sched.p_net[t],
            sched.pv[0].p[t],
            st(0),
            st(1),
            sched.fl[0].p[t]
        );
    }
    println!(
        "energy {:.3}, devices {:.3}",
        sched.cost_energy, sched.cost_devices
    );
    let rep = validate_schedule(&home, &sched, 1.0);
    println!(
        "device rules: {}",
        if rep.is_empty() {
            "all hold".to_string()
        } else {
            format!("{rep:?}")
        }
    );
    Ok(())
}
