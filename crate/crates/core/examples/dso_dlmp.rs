//! Price a fixed set of nodal loads on the bundled six-bus feeder.

use lem::dso::{check_tightness, solve_dso_subproblem, DsoInput, DsoSettings};
use lem::io::load_scenario;
use lem::model::to_per_unit;
use std::path::Path;

fn main() -> anyhow::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/feeder6");
    let scn = to_per_unit(&load_scenario(dir)?)?;
    let (mut p, _) = scn.background_by_bus();
    for pros in &scn.prosumers {
        let n = scn.network.bus_index(pros.bus_id).expect("bus exists");
        for (t, l) in pros.baseline_load.iter().enumerate() {
            p[n][t] += l;
        }
    }
    let settings = DsoSettings {
        dt: scn.dt,
        loss_cost: scn.profiles.loss_cost.clone(),
        rho_prime: 0.0,
    };
    let out = solve_dso_subproblem(
        &scn.network,
        &settings,
        &DsoInput::uncoupled(p, scn.reactive_forecast()),
    )?;

    let mva = scn.network.base_mva;
    println!("hour  loss[MW]  network price per MWh by bus");
    for t in [3, 12, 19] {
        let prices: Vec<String> = out
            .dlmp
            .iter()
            .map(|r| format!("{:7.3}", r[t] / mva))
            .collect();
        println!("{t:>4}  {:8.5}  {}", out.p_loss[t] * mva, prices.join(" "));
    }
    let rep = check_tightness(&scn.network, &out, 1e-6)?;
    println!("max relaxation residual {:.2e}", rep.max_residual);
    Ok(())
}
