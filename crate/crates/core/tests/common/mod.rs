#![allow(dead_code)]

use lem::linalg::CscMatrix;
use lem::miqp::{MixedBinaryProgram, RepairHints};
use lem::socp::{solve_socp, Cone, ConicProgram, FixedProgram, ProgramBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gated-flow instance: binaries `u_i` gate flows `0 ≤ f_i ≤ cap_i·u_i`,
/// flows meet a demand `Σ f_i = d`, pairs `(u_{2k}, u_{2k+1})` are exclusive.
/// Costs: fixed cost on `u`, linear plus quadratic cost on `f`.
pub fn gated_instance(seed: u64, n_bin: usize) -> MixedBinaryProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ProgramBuilder::new();
    let mut us = Vec::new();
    let mut fs = Vec::new();
    let mut hints = RepairHints::default();
    let mut total_cap = 0.0;
    for i in 0..n_bin {
        let u = b.nonneg();
        let f = b.nonneg();
        let cap = rng.random_range(0.5..2.0);
        if i % 2 == 0 {
            total_cap += cap;
        }
        b.add_cost(u, rng.random_range(0.0..1.0));
        b.add_cost(f, rng.random_range(-0.5..1.0));
        b.add_quad(f, rng.random_range(0.0..1.0));
        b.le(&[(f, 1.0), (u, -cap)], 0.0);
        b.le(&[(u, 1.0)], 1.0);
        hints.gates.push((u, f));
        us.push(u);
        fs.push(f);
    }
    for k in 0..n_bin / 2 {
        b.le(&[(us[2 * k], 1.0), (us[2 * k + 1], 1.0)], 1.0);
        hints.exclusive.push((us[2 * k], us[2 * k + 1]));
    }
    let demand = rng.random_range(0.1..0.9) * total_cap;
    let terms: Vec<(usize, f64)> = fs.iter().map(|&f| (f, 1.0)).collect();
    b.eq(&terms, demand);
    MixedBinaryProgram {
        relaxation: b.build(),
        binary_indices: us,
        hints,
    }
}

/// Exhaustive enumeration over all binary assignments.
pub fn enumerate(prob: &MixedBinaryProgram) -> Option<f64> {
    let n = prob.binary_indices.len();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        let mut f = FixedProgram::new(&prob.relaxation);
        for (i, &b) in prob.binary_indices.iter().enumerate() {
            f.fix(b, ((mask >> i) & 1) as f64).unwrap();
        }
        let Ok(red) = f.reduce() else { continue };
        let sol = solve_socp(&red.program, 1e-10).unwrap();
        if sol.is_optimal() {
            best = Some(best.map_or(sol.obj, |v: f64| v.min(sol.obj)));
        }
    }
    best
}

/// Random feasible, bounded program: `b = A x₀` with `x₀` interior and
/// `c = Aᵀy₀ + z₀` with `z₀` interior, so both primal and dual are strictly feasible.
pub fn random_program(seed: u64, with_quad: bool) -> ConicProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cones = Vec::new();
    let n_blocks = rng.random_range(1..5);
    for _ in 0..n_blocks {
        cones.push(match rng.random_range(0..3) {
            0 => Cone::Free(rng.random_range(1..4)),
            1 => Cone::NonNeg(rng.random_range(1..5)),
            _ => Cone::SecondOrder(rng.random_range(2..5)),
        });
    }
    let n: usize = cones.iter().map(|c| c.dim()).sum();
    let m = rng.random_range(1..=n.max(1));
    let mut x0 = vec![0.0; n];
    let mut z0 = vec![0.0; n];
    let mut start = 0;
    for c in &cones {
        let k = c.dim();
        for i in start..start + k {
            match c {
                Cone::Free(_) => {
                    x0[i] = rng.random_range(-2.0..2.0);
                }
                Cone::NonNeg(_) => {
                    x0[i] = rng.random_range(0.1..2.0);
                    z0[i] = rng.random_range(0.1..2.0);
                }
                Cone::SecondOrder(_) => {
                    if i > start {
                        x0[i] = rng.random_range(-1.0..1.0);
                        z0[i] = rng.random_range(-1.0..1.0);
                    }
                }
            }
        }
        if let Cone::SecondOrder(_) = c {
            let tx: f64 = x0[start + 1..start + k]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            let tz: f64 = z0[start + 1..start + k]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            x0[start] = tx + rng.random_range(0.1..1.0);
            z0[start] = tz + rng.random_range(0.1..1.0);
        }
        start += k;
    }
    let mut triplets = Vec::new();
    for r in 0..m {
        for j in 0..n {
            if rng.random_bool(0.6) || j == r {
                triplets.push((r, j, rng.random_range(-1.0..1.0)));
            }
        }
    }
    let a = CscMatrix::from_triplets(m, n, &triplets);
    let mut b = vec![0.0; m];
    a.mul_vec(&x0, &mut b);
    let y0: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut c = vec![0.0; n];
    a.mul_t_vec(&y0, &mut c);
    let q: Vec<f64> = if with_quad {
        (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    rng.random_range(0.0..2.0)
                } else {
                    0.0
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    for i in 0..n {
        c[i] += z0[i] - q.get(i).copied().unwrap_or(0.0) * x0[i];
    }
    ConicProgram {
        n_vars: n,
        c,
        q,
        offset: 0.0,
        a,
        b,
        cones,
    }
}

pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Bundled scenario in physical units.
pub fn fixture(name: &str) -> lem::model::Scenario {
    lem::io::load_scenario(data_dir().join(name)).unwrap()
}

/// Bundled generator spec.
pub fn spec(name: &str) -> lem::io::GeneratorSpec {
    let text =
        std::fs::read_to_string(data_dir().join("specs").join(format!("{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn bus(id: usize, is_pcc: bool) -> lem::model::Bus {
    lem::model::Bus {
        id,
        vmin: 0.9,
        vmax: 1.1,
        is_pcc,
    }
}

pub fn line(from: usize, to: usize, r: f64, x: f64, s_max: f64) -> lem::model::Line {
    lem::model::Line {
        from,
        to,
        r,
        x,
        s_max,
    }
}

/// Per-unit chain `1 - 2 - … - n` with bus 1 at the PCC.
pub fn chain(n: usize, r: f64, x: f64, s_max: f64) -> lem::model::NetworkModel {
    lem::model::NetworkModel {
        buses: (1..=n).map(|i| bus(i, i == 1)).collect(),
        lines: (1..n).map(|i| line(i, i + 1, r, x, s_max)).collect(),
        base_mva: 1.0,
        base_kv: 1.0,
    }
}

pub fn passive(id: &str, bus_id: usize, load: Vec<f64>) -> lem::model::Prosumer {
    lem::model::Prosumer {
        id: id.into(),
        bus_id,
        baseline_load: load,
        pf_load: 1.0,
        pvs: Vec::new(),
        storages: Vec::new(),
        fls: Vec::new(),
    }
}

/// Per-unit scenario on `net` with flat profiles.
pub fn scenario(
    net: lem::model::NetworkModel,
    prosumers: Vec<lem::model::Prosumer>,
    price: Vec<f64>,
) -> lem::model::Scenario {
    let th = price.len();
    lem::model::Scenario {
        name: "test".into(),
        units: lem::model::Units::PerUnit,
        network: net,
        prosumers,
        background: Vec::new(),
        horizon: th,
        dt: 1.0,
        profiles: lem::model::Profiles {
            loss_cost: price.clone(),
            wem_price: price,
            load_scale: vec![1.0; th],
            pv_cf: vec![0.0; th],
        },
        admm: lem::model::AdmmConfig::default(),
    }
}

/// Largest relative difference between two JSON trees of the same shape.
pub fn json_max_rel_diff(a: &serde_json::Value, b: &serde_json::Value) -> f64 {
    use serde_json::Value;
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            (x - y).abs() / x.abs().max(y.abs()).max(1e-300)
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => x
            .iter()
            .zip(y)
            .map(|(p, q)| json_max_rel_diff(p, q))
            .fold(0.0, f64::max),
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => x
            .iter()
            .map(|(k, v)| y.get(k).map_or(f64::INFINITY, |w| json_max_rel_diff(v, w)))
            .fold(0.0, f64::max),
        _ if a == b => 0.0,
        _ => f64::INFINITY,
    }
}
