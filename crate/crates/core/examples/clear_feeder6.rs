//! Generate a small feeder and clear it with the distributed market.

use lem::io::{generate_scenario, GeneratorSpec};
use lem::market::run_clearing;
use std::time::Instant;

fn main() -> anyhow::Result<()> {
    let arg = |i: usize, d: f64| std::env::args().nth(i).map_or(Ok(d), |s| s.parse());
    let mut spec = GeneratorSpec {
        name: "feeder6".into(),
        prosumer_penetration: arg(1, 0.5)?,
        ..Default::default()
    };
    spec.admm.rho = arg(2, spec.admm.rho)?;
    spec.admm.rho_prime = arg(3, spec.admm.rho_prime)?;
    let scn = generate_scenario(&spec)?;
    println!(
        "{} prosumers, {} background loads",
        scn.prosumers.len(),
        scn.background.len()
    );
    let start = Instant::now();
    let res = run_clearing(&scn)?;
    println!(
        "{:?} after {} outer iterations (max inner {}) in {:.1?}",
        res.status,
        res.outer_iterations,
        res.max_inner_iterations,
        start.elapsed()
    );
    for r in &res.trace.outer {
        println!(
            "  k={:>3} dλp={:.3e} cons={:.3e} dual={:.3e} inner={}",
            r.outer, r.lambda_p_change, r.consensus_residual, r.dual_residual, r.inner_iterations
        );
    }
    println!("total cost {:.4}", res.total_objective());
    Ok(())
}
