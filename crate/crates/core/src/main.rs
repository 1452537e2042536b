use clap::{Parser, Subcommand, ValueEnum};
use lem::io::{
    emit_results, generate_scenario, load_scenario, write_scenario, GeneratorSpec, IoError,
    RunOutput,
};
use lem::market::{run_clearing_with, ClearingStatus, RunOptions};
use lem::model::{to_per_unit, ProsumerSolver, Scenario};
use lem::oracle::{solve_centralized, solve_selfish, Binaries};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lem",
    version,
    about = "Local energy market clearing on radial feeders"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Clear a scenario and write dlmp.csv, schedules.csv, trace.csv and summary.json.
    Clear(ClearArgs),
    /// Build a synthetic scenario directory from a JSON generator spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load and check a scenario directory.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Distributed,
    Centralized,
    Selfish,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Exact,
    RelaxRepair,
}

#[derive(clap::Args)]
struct ClearArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value = "distributed")]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    rho_prime: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eps1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eps2: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long, value_enum)]
    prosumer_solver: Option<SolverArg>,
    /// Write every agent message to messages.jsonl.
    #[arg(long)]
    log_messages: bool,
    /// Record wall-clock milliseconds in trace.csv.
    #[arg(long)]
    timing: bool,
    /// Centralized mode only: fix binaries from a distributed run first.
    #[arg(long)]
    fix_binaries: bool,
}

enum Failure {
    Input(String),
    Run(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Input(e.to_string())
    }
}

fn apply_overrides(scn: &mut Scenario, a: &ClearArgs) -> Result<(), Failure> {
    let c = &mut scn.admm;
    if let Some(v) = a.rho {
        c.rho = v;
    }
    if let Some(v) = a.rho_prime {
        c.rho_prime = v;
    }
    if let Some(v) = a.eps1 {
        c.eps1 = v;
    }
    if let Some(v) = a.eps2 {
        c.eps2 = v;
    }
    if let Some(v) = a.max_outer {
        c.max_outer = v;
    }
    if let Some(v) = a.max_inner {
        c.max_inner = v;
    }
    if let Some(s) = a.prosumer_solver {
        c.prosumer_solver = match s {
            SolverArg::Exact => ProsumerSolver::Exact,
            SolverArg::RelaxRepair => ProsumerSolver::RelaxRepair,
        };
    }
    c.validate().map_err(|e| Failure::Input(e.to_string()))
}

fn clear(a: &ClearArgs) -> Result<bool, Failure> {
    let mut scn = load_scenario(&a.scenario)?;
    apply_overrides(&mut scn, a)?;
    let opts = RunOptions {
        log_messages: a.log_messages,
        timing: a.timing,
        ..Default::default()
    };
    let run = |s: &Scenario| run_clearing_with(s, &opts).map_err(|e| Failure::Run(e.to_string()));
    let (out, converged) = match a.mode {
        Mode::Distributed => {
            let r = run(&scn)?;
            (RunOutput::from(&r), r.status == ClearingStatus::Converged)
        }
        Mode::Centralized => {
            let dist = if a.fix_binaries {
                Some(run(&scn)?)
            } else {
                None
            };
            let binaries = dist.as_ref().map_or(Binaries::Relaxed, Binaries::FixedFrom);
            let r = solve_centralized(&scn, binaries).map_err(|e| Failure::Run(e.to_string()))?;
            (RunOutput::from_oracle(&r, per_unit(&scn)?), true)
        }
        Mode::Selfish => {
            let r = solve_selfish(&scn).map_err(|e| Failure::Run(e.to_string()))?;
            (RunOutput::from_oracle(&r, per_unit(&scn)?), true)
        }
    };
    emit_results(&out, &a.out).map_err(|e| Failure::Run(e.to_string()))?;
    print!(
        "{} {}: total cost {:.4}",
        out.mode,
        out.status,
        out.costs.total()
    );
    if out.outer_iterations > 0 {
        print!(" ({} outer iterations)", out.outer_iterations);
    }
    println!();
    Ok(converged)
}

fn per_unit(scn: &Scenario) -> Result<Scenario, Failure> {
    to_per_unit(scn).map_err(|e| Failure::Input(e.to_string()))
}

fn generate(spec: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(spec)
        .map_err(|e| Failure::Input(format!("{}: {e}", spec.display())))?;
    let spec: GeneratorSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", spec.display())))?;
    let scn = generate_scenario(&spec)?;
    write_scenario(&scn, out)?;
    println!(
        "wrote {} ({} buses, {} prosumers)",
        out.display(),
        scn.network.n_buses(),
        scn.prosumers.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Clear(a) => clear(a).map(|ok| if ok { 0 } else { 1 }),
        Cmd::Generate { spec, out } => generate(spec, out).map(|_| 0),
        Cmd::Validate { scenario } => load_scenario(scenario).map_err(Failure::from).map(|s| {
            println!(
                "ok: {} ({} buses, {} prosumers, {} hours)",
                s.name,
                s.network.n_buses(),
                s.prosumers.len(),
                s.horizon
            );
            0
        }),
    };
    match res {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => {
            eprintln!("error: iteration limit reached before the stopping criteria held");
            ExitCode::from(code)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
