//! Exact branch-and-bound against relax-and-repair on a prosumer problem.

use lem::miqp::{relax_and_repair, solve_mbp};
use lem::model::{Prosumer, StorageDevice, StorageKind};
use lem::prosumer::{build_subproblem, ProsumerInput};
use std::time::Instant;

fn main() -> anyhow::Result<()> {
    let th = 12;
    let battery = StorageDevice {
        kind: StorageKind::Bess,
        p_ch_max: 1.0,
        p_dch_max: 1.0,
        eta_ch: 0.9,
        eta_dch: 0.9,
        e0: 1.0,
        soc_min: 0.0,
        soc_max: 3.0,
        t_arrive: 0,
        t_depart: th - 1,
        e_trip: 1.0,
        throughput_cost: 1.0,
    };
    let pros = Prosumer {
        id: "b".into(),
        bus_id: 2,
        baseline_load: vec![0.5; th],
        pf_load: 1.0,
        pvs: Vec::new(),
        storages: vec![battery],
        fls: Vec::new(),
    };
    let price: Vec<f64> = (0..th)
        .map(|t| 30.0 + 25.0 * ((t as f64) * 0.9).sin())
        .collect();
    let sub = build_subproblem(&pros, &ProsumerInput::price_taker(&price), 1.0)?;
    println!("{} binaries", sub.program.binary_indices.len());

    let start = Instant::now();
    let exact = solve_mbp(&sub.program, 1e-9, 100_000)?;
    println!(
        "branch-and-bound: {:.6} ({:?}, {} nodes, {:.1?})",
        exact.obj_incumbent,
        exact.status,
        exact.nodes_explored,
        start.elapsed()
    );
    let start = Instant::now();
    match relax_and_repair(&sub.program)? {
        Some(r) => println!(
            "relax-and-repair: {:.6} (relaxation {:.6}, {:.1?})",
            r.obj,
            r.relaxation_obj,
            start.elapsed()
        ),
        None => println!("relax-and-repair found no feasible rounding"),
    }
    Ok(())
}
