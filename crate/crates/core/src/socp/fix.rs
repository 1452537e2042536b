//! Variable fixing with simple presolve, used by branch-and-bound and by the
//! repair heuristic.
//!
//! Fixed variables are substituted into the objective and the equality rows.
//! Rows left with a single free or nonnegative variable fix that variable, and
//! rows whose remaining variables are all nonnegative with same-sign
//! coefficients and zero right-hand side fix them all to zero. Second-order
//! cone members are never removed.

use super::cone::blocks;
use super::{Cone, ConicProgram, ConicSolution};
use crate::linalg::CscMatrix;

const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FixError {
    #[error("fixing makes row {row} infeasible")]
    Infeasible { row: usize },
    #[error("variable {0} belongs to a second-order cone")]
    SocVariable(usize),
    #[error("variable {0} out of range")]
    OutOfRange(usize),
}

/// A program with some variables pinned to values.
#[derive(Debug, Clone)]
pub struct FixedProgram<'a> {
    prog: &'a ConicProgram,
    fixed: Vec<Option<f64>>,
}

/// The reduced program and the maps back to the original indices.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub program: ConicProgram,
    /// Original variable → reduced index, `None` when fixed.
    pub var_map: Vec<Option<usize>>,
    /// Original row → reduced row, `None` when removed.
    pub row_map: Vec<Option<usize>>,
    /// Removed rows in order, with the variable a singleton row fixed.
    removed: Vec<(usize, Option<usize>)>,
    fixed: Vec<f64>,
    original_c: Vec<f64>,
    original_q: Vec<f64>,
    original_a: CscMatrix,
}

impl<'a> FixedProgram<'a> {
    pub fn new(prog: &'a ConicProgram) -> Self {
        Self {
            prog,
            fixed: vec![None; prog.n_vars],
        }
    }

    pub fn fix(&mut self, var: usize, value: f64) -> Result<&mut Self, FixError> {
        let cone = *self
            .prog
            .var_cones()
            .get(var)
            .ok_or(FixError::OutOfRange(var))?;
        if let Cone::SecondOrder(_) = cone {
            return Err(FixError::SocVariable(var));
        }
        self.fixed[var] = Some(value);
        Ok(self)
    }

    pub fn reduce(self) -> Result<Reduction, FixError> {
        let prog = self.prog;
        let var_cones = prog.var_cones();
        let mut fixed = self.fixed;
        let rows = prog.a.rows();
        let mut alive = vec![true; rows.len()];
        let mut removed = Vec::new();
        loop {
            let mut changed = false;
            for (r, row) in rows.iter().enumerate() {
                if !alive[r] {
                    continue;
                }
                let mut rhs = prog.b[r];
                let mut open = Vec::new();
                for &(j, a) in row {
                    match fixed[j] {
                        Some(v) => rhs -= a * v,
                        None if a != 0.0 => open.push((j, a)),
                        None => {}
                    }
                }
                let scale = 1.0 + prog.b[r].abs();
                let removable = |j: usize| !matches!(var_cones[j], Cone::SecondOrder(_));
                match open.as_slice() {
                    [] => {
                        if rhs.abs() > FEAS_TOL * scale {
                            return Err(FixError::Infeasible { row: r });
                        }
                        alive[r] = false;
                        removed.push((r, None));
                        changed = true;
                    }
                    &[(j, a)] if removable(j) => {
                        let mut v = rhs / a;
                        if let Cone::NonNeg(_) = var_cones[j] {
                            if v < -FEAS_TOL * scale {
                                return Err(FixError::Infeasible { row: r });
                            }
                            v = v.max(0.0);
                        }
                        fixed[j] = Some(v);
                        alive[r] = false;
                        removed.push((r, Some(j)));
                        changed = true;
                    }
                    terms => {
                        let all_nonneg = terms
                            .iter()
                            .all(|&(j, _)| matches!(var_cones[j], Cone::NonNeg(_)));
                        let pos = terms.iter().all(|&(_, a)| a > 0.0);
                        let neg = terms.iter().all(|&(_, a)| a < 0.0);
                        if all_nonneg && (pos || neg) {
                            let signed = if pos { rhs } else { -rhs };
                            if signed < -FEAS_TOL * scale {
                                return Err(FixError::Infeasible { row: r });
                            }
                            if signed.abs() <= 1e-14 * scale {
                                for &(j, _) in terms {
                                    fixed[j] = Some(0.0);
                                }
                                alive[r] = false;
                                removed.push((r, None));
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        let mut var_map = vec![None; prog.n_vars];
        let mut next = 0;
        for j in 0..prog.n_vars {
            if fixed[j].is_none() {
                var_map[j] = Some(next);
                next += 1;
            }
        }
        let mut row_map = vec![None; rows.len()];
        let mut next_row = 0;
        for r in 0..rows.len() {
            if alive[r] {
                row_map[r] = Some(next_row);
                next_row += 1;
            }
        }
        let mut cones = Vec::new();
        for b in blocks(&prog.cones) {
            let kept = b.range().filter(|&j| fixed[j].is_none()).count();
            if kept == 0 {
                continue;
            }
            let kind = match b.kind {
                Cone::Free(_) => Cone::Free(kept),
                Cone::NonNeg(_) => Cone::NonNeg(kept),
                soc => soc,
            };
            match (cones.last_mut(), kind) {
                (Some(Cone::Free(n)), Cone::Free(m)) => *n += m,
                (Some(Cone::NonNeg(n)), Cone::NonNeg(m)) => *n += m,
                _ => cones.push(kind),
            }
        }
        let mut offset = prog.offset;
        let mut c = vec![0.0; next];
        let mut q = vec![0.0; next];
        let mut b = vec![0.0; next_row];
        for r in 0..rows.len() {
            if let Some(rr) = row_map[r] {
                b[rr] = prog.b[r];
            }
        }
        let mut triplets = Vec::new();
        for j in 0..prog.n_vars {
            match (fixed[j], var_map[j]) {
                (Some(v), _) => {
                    offset += prog.c[j] * v + 0.5 * prog.quad(j) * v * v;
                    for (r, a) in prog.a.col(j) {
                        if let Some(rr) = row_map[r] {
                            b[rr] -= a * v;
                        }
                    }
                }
                (None, Some(jj)) => {
                    c[jj] = prog.c[j];
                    q[jj] = prog.quad(j);
                    for (r, a) in prog.a.col(j) {
                        if let Some(rr) = row_map[r] {
                            triplets.push((rr, jj, a));
                        }
                    }
                }
                (None, None) => unreachable!(),
            }
        }
        if q.iter().all(|&v| v == 0.0) {
            q.clear();
        }
        let program = ConicProgram {
            n_vars: next,
            c,
            q,
            offset,
            a: CscMatrix::from_triplets(next_row, next, &triplets),
            b,
            cones,
        };
        Ok(Reduction {
            program,
            var_map,
            row_map,
            removed,
            fixed: fixed.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
            original_c: prog.c.clone(),
            original_q: prog.q.clone(),
            original_a: prog.a.clone(),
        })
    }
}

impl Reduction {
    /// Original-length primal vector from a reduced one.
    pub fn expand_x(&self, x: &[f64]) -> Vec<f64> {
        self.var_map
            .iter()
            .zip(&self.fixed)
            .map(|(m, &v)| m.map_or(v, |j| x[j]))
            .collect()
    }

    /// Lifts a reduced solution. A row removed as a singleton takes the dual
    /// that zeroes its variable's reduced cost, other removed rows get zero;
    /// fixed variables get the reduced cost `c + Qx − Aᵀy` as their `z`.
    pub fn expand(&self, sol: &ConicSolution) -> ConicSolution {
        let x = self.expand_x(&sol.x);
        let mut y: Vec<f64> = self
            .row_map
            .iter()
            .map(|m| m.map_or(0.0, |r| sol.y[r]))
            .collect();
        for &(r, var) in self.removed.iter().rev() {
            let Some(j) = var else { continue };
            let q = self.original_q.get(j).copied().unwrap_or(0.0);
            let mut rest = self.original_c[j] + q * x[j];
            let mut pivot = 0.0;
            for (rr, a) in self.original_a.col(j) {
                if rr == r {
                    pivot = a;
                } else {
                    rest -= a * y[rr];
                }
            }
            y[r] = rest / pivot;
        }
        let mut aty = vec![0.0; x.len()];
        self.original_a.mul_t_vec(&y, &mut aty);
        let z = self
            .var_map
            .iter()
            .enumerate()
            .map(|(j, m)| match m {
                Some(jj) => sol.z[*jj],
                None => {
                    let q = self.original_q.get(j).copied().unwrap_or(0.0);
                    self.original_c[j] + q * x[j] - aty[j]
                }
            })
            .collect();
        ConicSolution {
            status: sol.status,
            x,
            y,
            z,
            obj: sol.obj,
            dual_obj: sol.dual_obj,
            residuals: sol.residuals,
            iterations: sol.iterations,
        }
    }
}
