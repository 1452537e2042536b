//! Independent recomputation of optimality conditions and finite-difference
//! checks of equality duals.

use super::cone::{blocks, soc_residual};
use super::{solve_socp, Cone, ConicProgram, ConicSolution};
use crate::linalg::{dot, inf_norm};

/// Residuals of a candidate primal-dual pair, normalized like the solver's
/// stopping test, plus absolute values and cone violations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub primal_abs: f64,
    pub dual_abs: f64,
    /// Largest violation of `x ∈ K` or `z ∈ K*`.
    pub cone: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap).max(self.cone)
    }
}

pub fn check_kkt(prog: &ConicProgram, sol: &ConicSolution) -> KktReport {
    let n = prog.n_vars;
    if n == 0 && prog.n_eq() == 0 {
        return KktReport::default();
    }
    let mut ax = vec![0.0; prog.n_eq()];
    prog.a.mul_vec(&sol.x, &mut ax);
    let rp: Vec<f64> = ax.iter().zip(&prog.b).map(|(a, b)| a - b).collect();
    let mut aty = vec![0.0; n];
    prog.a.mul_t_vec(&sol.y, &mut aty);
    let rd: Vec<f64> = (0..n)
        .map(|i| prog.c[i] + prog.quad(i) * sol.x[i] - aty[i] - sol.z[i])
        .collect();
    let mut cone: f64 = 0.0;
    let mut gap = 0.0;
    for b in blocks(&prog.cones) {
        let r = b.range();
        let (x, z) = (&sol.x[r.clone()], &sol.z[r]);
        match b.kind {
            Cone::Free(_) => cone = cone.max(inf_norm(z)),
            Cone::NonNeg(_) => {
                for (&xi, &zi) in x.iter().zip(z) {
                    cone = cone.max(-xi).max(-zi);
                }
                gap += dot(x, z);
            }
            Cone::SecondOrder(_) => {
                cone = cone.max(-soc_residual(x)).max(-soc_residual(z));
                gap += dot(x, z);
            }
        }
    }
    let obj = prog.objective(&sol.x);
    let primal_abs = inf_norm(&rp);
    let dual_abs = inf_norm(&rd);
    KktReport {
        primal: primal_abs / (1.0 + inf_norm(&prog.b)),
        dual: dual_abs / (1.0 + inf_norm(&prog.c)),
        gap: gap.abs() / (1.0 + obj.abs()),
        primal_abs,
        dual_abs,
        cone,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProbeError {
    #[error("delta must be positive")]
    NonPositiveDelta,
    #[error("equality index {index} out of range ({n_eq} rows)")]
    IndexOutOfRange { index: usize, n_eq: usize },
    #[error("solution is not optimal")]
    NotOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityProbe {
    /// Central difference `(obj(b + δe) − obj(b − δe)) / 2δ`.
    pub estimate: f64,
    /// Reported `y[eq_index]`.
    pub dual: f64,
    /// False when either re-solve failed to reach optimality.
    pub conclusive: bool,
}

impl SensitivityProbe {
    pub fn relative_error(&self) -> f64 {
        (self.estimate - self.dual).abs() / self.dual.abs().max(1e-12).max(self.estimate.abs())
    }
}

/// Re-solves with `b[eq_index] ± delta` at tolerance 1e-11.
pub fn dual_sensitivity_probe(
    prog: &ConicProgram,
    sol: &ConicSolution,
    eq_index: usize,
    delta: f64,
) -> Result<SensitivityProbe, ProbeError> {
    if !(delta > 0.0) {
        return Err(ProbeError::NonPositiveDelta);
    }
    if eq_index >= prog.n_eq() {
        return Err(ProbeError::IndexOutOfRange {
            index: eq_index,
            n_eq: prog.n_eq(),
        });
    }
    if !sol.is_optimal() {
        return Err(ProbeError::NotOptimal);
    }
    let solve_shifted = |d: f64| {
        let mut p = prog.clone();
        p.b[eq_index] += d;
        solve_socp(&p, 1e-11)
            .ok()
            .filter(|s| s.is_optimal())
            .map(|s| s.obj)
    };
    let (up, down) = (solve_shifted(delta), solve_shifted(-delta));
    let dual = sol.y[eq_index];
    Ok(match (up, down) {
        (Some(u), Some(d)) => SensitivityProbe {
            estimate: (u - d) / (2.0 * delta),
            dual,
            conclusive: true,
        },
        _ => SensitivityProbe {
            estimate: f64::NAN,
            dual,
            conclusive: false,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::super::{ProgramBuilder, SolveStatus};
    use super::*;

    fn lp() -> ConicProgram {
        let mut b = ProgramBuilder::new();
        let x1 = b.nonneg();
        let x2 = b.nonneg();
        b.add_cost(x1, 1.0);
        b.add_cost(x2, 1.0);
        b.eq(&[(x1, 1.0), (x2, 1.0)], 1.0);
        b.build()
    }

    #[test]
    fn solver_output_passes() {
        let p = lp();
        let sol = solve_socp(&p, 1e-8).unwrap();
        assert!(check_kkt(&p, &sol).max() <= 1e-7);
    }

    #[test]
    fn perturbed_point_fails() {
        let p = lp();
        let mut sol = solve_socp(&p, 1e-8).unwrap();
        sol.x[0] += 1e-3;
        assert!(check_kkt(&p, &sol).primal_abs >= 1e-4);
    }

    #[test]
    fn empty_program_is_clean() {
        let p = ProgramBuilder::new().build();
        let sol = ConicSolution {
            status: SolveStatus::Optimal,
            x: vec![],
            y: vec![],
            z: vec![],
            obj: 0.0,
            dual_obj: 0.0,
            residuals: Default::default(),
            iterations: 0,
        };
        assert_eq!(check_kkt(&p, &sol), KktReport::default());
    }

    #[test]
    fn probe_matches_lp_dual() {
        let p = lp();
        let sol = solve_socp(&p, 1e-9).unwrap();
        let probe = dual_sensitivity_probe(&p, &sol, 0, 1e-5).unwrap();
        assert!(probe.conclusive);
        assert!((probe.estimate - 1.0).abs() < 1e-4);
        assert_eq!(
            dual_sensitivity_probe(&p, &sol, 0, 0.0)
                .unwrap_err()
                .to_string(),
            "delta must be positive"
        );
    }
}
