//! Clear one scenario three ways: distributed, centralized and selfish.

use lem::io::load_scenario;
use lem::market::{run_clearing, Costs};
use lem::oracle::{solve_centralized, solve_selfish, Binaries};
use std::path::Path;

fn row(name: &str, c: &Costs) {
    println!(
        "{name:<12} {:>11.4} {:>9.4} {:>9.4} {:>11.4}",
        c.lmo,
        c.dso,
        c.devices,
        c.total()
    );
}

fn main() -> anyhow::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "feeder6".into());
    let scn = load_scenario(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("data")
            .join(&name),
    )?;
    let dist = run_clearing(&scn)?;
    let fixed = solve_centralized(&scn, Binaries::FixedFrom(&dist))?;
    let relaxed = solve_centralized(&scn, Binaries::Relaxed)?;
    let selfish = solve_selfish(&scn)?;

    println!(
        "{name}: {} prosumers, {} outer iterations",
        scn.prosumers.len(),
        dist.outer_iterations
    );
    println!(
        "{:<12} {:>11} {:>9} {:>9} {:>11}",
        "mode", "exchange", "losses", "devices", "total"
    );
    row("distributed", &dist.costs);
    row("centralized", &fixed.costs);
    row("relaxed", &relaxed.costs);
    row("selfish", &selfish.costs);
    if let Some(c) = &selfish.congestion {
        println!("selfish schedules break network limits: {c}");
    }
    Ok(())
}
