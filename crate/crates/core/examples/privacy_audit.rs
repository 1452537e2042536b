//! Log every agent message during a run and audit what crossed agent lines.

use lem::io::load_scenario;
use lem::market::{audit_privacy, run_clearing_with, RunOptions};
use std::path::Path;

fn main() -> anyhow::Result<()> {
    let scn = load_scenario(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/feeder6"))?;
    let res = run_clearing_with(
        &scn,
        &RunOptions {
            log_messages: true,
            ..Default::default()
        },
    )?;
    println!(
        "{} messages, first one:\n  {}",
        res.messages.len(),
        res.messages[0]
    );
    let rep = audit_privacy(&res.messages);
    println!("audit passed: {}", rep.passed);

    // a prosumer that also reports its battery state
    let mut log = res.messages.clone();
    let i = log
        .iter()
        .position(|l| l.contains("ProsumerToLmo"))
        .expect("prosumer message");
    let mut v: serde_json::Value = serde_json::from_str(&log[i])?;
    v["body"]["soc"] = serde_json::json!([1.2, 1.4]);
    log[i] = v.to_string();
    let rep = audit_privacy(&log);
    println!("tampered log passed: {}", rep.passed);
    for m in &rep.violations {
        println!("  {m}");
    }
    Ok(())
}
