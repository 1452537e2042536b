//! Build a small conic program, solve it and inspect the certificate.
//!
//! Minimizes `t + 0.5 w²` over `‖(u, v)‖ ≤ t`, `u + v = 1`, `w ≥ 0.2`.

use lem::socp::{check_kkt, solve_socp, ProgramBuilder};

fn main() {
    let mut b = ProgramBuilder::new();
    let t = b.soc(3);
    let (u, v) = (t + 1, t + 2);
    let w = b.nonneg();
    b.add_cost(t, 1.0);
    b.add_quad(w, 1.0);
    let row = b.eq(&[(u, 1.0), (v, 1.0)], 1.0);
    b.ge(&[(w, 1.0)], 0.2);
    let prog = b.build();

    let sol = solve_socp(&prog, 1e-9).expect("program is well formed");
    println!(
        "status {:?} after {} iterations",
        sol.status, sol.iterations
    );
    println!("t = {:.6} (1/√2 = {:.6})", sol.x[t], 0.5f64.sqrt());
    println!(
        "u = {:.6}, v = {:.6}, w = {:.6}",
        sol.x[u], sol.x[v], sol.x[w]
    );
    println!("dual of u + v = 1: {:.6}", sol.y[row]);
    println!("primal {:.9} dual {:.9}", sol.obj, sol.dual_obj);
    let kkt = check_kkt(&prog, &sol);
    println!("largest KKT residual {:.2e}", kkt.max());
}
