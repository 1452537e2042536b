//! Generate a 69-bus scenario at a chosen prosumer penetration and write it.
//!
//! `cargo run --example generate_scenario -- 0.75 /tmp/ieee69_75`

use lem::io::{generate_scenario, load_scenario, write_scenario, GeneratorSpec, Template};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let penetration: f64 = args.next().map_or(Ok(0.6), |s| s.parse())?;
    let out = args.next().unwrap_or_else(|| "ieee69_generated".into());
    let spec = GeneratorSpec {
        name: "ieee69".into(),
        template: Template::Ieee69,
        prosumer_penetration: penetration,
        ..Default::default()
    };
    let scn = generate_scenario(&spec)?;
    let units = |f: fn(&lem::model::Prosumer) -> usize| scn.prosumers.iter().map(f).sum::<usize>();
    println!(
        "{} prosumer buses holding {} PV units, {} storage units, {} flexible loads",
        scn.prosumers.len(),
        units(|p| p.pvs.len()),
        units(|p| p.storages.len()),
        units(|p| p.fls.len()),
    );
    write_scenario(&scn, &out)?;
    assert_eq!(load_scenario(&out)?, scn);
    println!("wrote {out}");
    Ok(())
}
