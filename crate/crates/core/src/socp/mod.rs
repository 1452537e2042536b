//! Standard-form conic programs and a primal-dual interior-point solver.
//!
//! A [`ConicProgram`] is
//!
//! ```text
//! minimize    cᵀx + ½ Σ q_i x_i² + offset
//! subject to  A x = b,   x ∈ K₁ × K₂ × … × K_p
//! ```
//!
//! where each `K_j` is a free block, a nonnegative orthant or a second-order
//! cone `{(t, u) : t ≥ ‖u‖}`. The cone blocks partition `x` in order. Dual
//! variables are `y` (one per equality row) and `z ∈ K*` with
//! `c + Qx − Aᵀy − z = 0`, so `y_i` is the sensitivity of the optimal value to
//! `b_i`.

mod check;
pub(crate) mod cone;
mod dump;
mod fix;
mod ipm;

pub use check::{check_kkt, dual_sensitivity_probe, KktReport, ProbeError, SensitivityProbe};
pub use dump::{read_program, write_program, DumpError};
pub use fix::{FixError, FixedProgram, Reduction};
pub use ipm::{solve_socp, solve_socp_with, SolverSettings};

use crate::linalg::CscMatrix;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Free(usize),
    NonNeg(usize),
    /// `(t, u)` with `t ≥ ‖u‖`; dimension counts the head.
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(self) -> usize {
        match self {
            Cone::Free(k) | Cone::NonNeg(k) | Cone::SecondOrder(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub n_vars: usize,
    pub c: Vec<f64>,
    /// Diagonal of the quadratic term (`½ Σ q_i x_i²`); empty means linear.
    pub q: Vec<f64>,
    pub offset: f64,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProgramError {
    #[error("cone dimensions sum to {got}, expected {expected}")]
    ConeSizeMismatch { got: usize, expected: usize },
    #[error("second-order cone of dimension {0} (needs at least 2)")]
    SmallSoc(usize),
    #[error("negative quadratic coefficient {value} on variable {index}")]
    NegativeQuadratic { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("non-finite data in {0}")]
    NonFinite(&'static str),
}

impl ConicProgram {
    pub fn n_eq(&self) -> usize {
        self.b.len()
    }

    pub fn quad(&self, i: usize) -> f64 {
        self.q.get(i).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let total: usize = self.cones.iter().map(|c| c.dim()).sum();
        if total != self.n_vars {
            return Err(ProgramError::ConeSizeMismatch {
                got: total,
                expected: self.n_vars,
            });
        }
        if let Some(k) = self.cones.iter().find_map(|c| match c {
            Cone::SecondOrder(k) if *k < 2 => Some(*k),
            _ => None,
        }) {
            return Err(ProgramError::SmallSoc(k));
        }
        if let Some((index, &value)) = self.q.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(ProgramError::NegativeQuadratic { index, value });
        }
        if self.c.len() != self.n_vars || !(self.q.is_empty() || self.q.len() == self.n_vars) {
            return Err(ProgramError::Shape("objective length".into()));
        }
        if self.a.ncols != self.n_vars || self.a.nrows != self.b.len() {
            return Err(ProgramError::Shape(format!(
                "A is {}x{}, b has {}, n_vars {}",
                self.a.nrows,
                self.a.ncols,
                self.b.len(),
                self.n_vars
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.c) || !finite(&self.q) || !self.offset.is_finite() {
            return Err(ProgramError::NonFinite("objective"));
        }
        if !finite(&self.a.values) || !finite(&self.b) {
            return Err(ProgramError::NonFinite("constraints"));
        }
        Ok(())
    }

    /// Primal objective at `x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v = self.offset;
        for i in 0..self.n_vars {
            v += self.c[i] * x[i] + 0.5 * self.quad(i) * x[i] * x[i];
        }
        v
    }

    /// Indices of every variable with its cone kind, in order.
    pub fn var_cones(&self) -> Vec<Cone> {
        let mut out = Vec::with_capacity(self.n_vars);
        for &c in &self.cones {
            for _ in 0..c.dim() {
                out.push(c);
            }
        }
        out
    }

    /// Copy with every `c` and `q` entry multiplied by `alpha` (and the offset).
    pub fn scaled_objective(&self, alpha: f64) -> Self {
        let mut p = self.clone();
        p.c.iter_mut().for_each(|v| *v *= alpha);
        p.q.iter_mut().for_each(|v| *v *= alpha);
        p.offset *= alpha;
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    /// `‖Ax − b‖∞ / (1 + ‖b‖∞)`
    pub primal: f64,
    /// `‖c + Qx − Aᵀy − z‖∞ / (1 + ‖c‖∞)`
    pub dual: f64,
    /// `xᵀz / (1 + |obj|)`
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// Equality duals.
    pub y: Vec<f64>,
    /// Dual cone variable paired with `x` (zero on free blocks).
    pub z: Vec<f64>,
    pub obj: f64,
    pub dual_obj: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Incremental construction of a [`ConicProgram`]. Consecutive free or
/// nonnegative variables are merged into a single block.
#[derive(Debug, Clone, Default)]
pub struct ProgramBuilder {
    cones: Vec<Cone>,
    c: Vec<f64>,
    q: Vec<f64>,
    offset: f64,
    triplets: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b.len()
    }

    fn push_block(&mut self, kind: Cone) -> usize {
        let start = self.c.len();
        let k = kind.dim();
        match (self.cones.last_mut(), kind) {
            (Some(Cone::Free(n)), Cone::Free(m)) => *n += m,
            (Some(Cone::NonNeg(n)), Cone::NonNeg(m)) => *n += m,
            _ => self.cones.push(kind),
        }
        self.c.extend(std::iter::repeat_n(0.0, k));
        self.q.extend(std::iter::repeat_n(0.0, k));
        start
    }

    pub fn free(&mut self) -> usize {
        self.push_block(Cone::Free(1))
    }

    pub fn nonneg(&mut self) -> usize {
        self.push_block(Cone::NonNeg(1))
    }

    /// Returns the index of the head; the tail follows contiguously.
    pub fn soc(&mut self, dim: usize) -> usize {
        assert!(dim >= 2);
        self.push_block(Cone::SecondOrder(dim))
    }

    pub fn add_cost(&mut self, var: usize, c: f64) {
        self.c[var] += c;
    }

    pub fn add_quad(&mut self, var: usize, q: f64) {
        self.q[var] += q;
    }

    pub fn add_offset(&mut self, v: f64) {
        self.offset += v;
    }

    /// Adds `Σ coef·x = rhs`, returning the row index.
    pub fn eq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.b.len();
        for &(j, v) in terms {
            self.triplets.push((row, j, v));
        }
        self.b.push(rhs);
        row
    }

    /// Adds `Σ coef·x ≤ rhs` through a fresh nonnegative slack; returns `(row, slack)`.
    pub fn le(&mut self, terms: &[(usize, f64)], rhs: f64) -> (usize, usize) {
        let s = self.nonneg();
        let mut t = terms.to_vec();
        t.push((s, 1.0));
        (self.eq(&t, rhs), s)
    }

    /// Adds `Σ coef·x ≥ rhs` through a fresh nonnegative surplus.
    pub fn ge(&mut self, terms: &[(usize, f64)], rhs: f64) -> (usize, usize) {
        let s = self.nonneg();
        let mut t = terms.to_vec();
        t.push((s, -1.0));
        (self.eq(&t, rhs), s)
    }

    pub fn set_rhs(&mut self, row: usize, rhs: f64) {
        self.b[row] = rhs;
    }

    pub fn build(self) -> ConicProgram {
        let n = self.c.len();
        let has_quad = self.q.iter().any(|&v| v != 0.0);
        ConicProgram {
            n_vars: n,
            a: CscMatrix::from_triplets(self.b.len(), n, &self.triplets),
            c: self.c,
            q: if has_quad { self.q } else { Vec::new() },
            offset: self.offset,
            b: self.b,
            cones: self.cones,
        }
    }
}
