//! Infeasible-start primal-dual interior-point method with Nesterov-Todd
//! scaling and a Mehrotra predictor-corrector.
//!
//! Each iteration solves the regularized quasi-definite KKT system
//!
//! ```text
//! [ Q + W⁻² + δI    Aᵀ  ] [ dx ]   [ −r_d + W⁻¹ d ]
//! [ A              −δI  ] [ −dy] = [ −r_p         ]
//! ```
//!
//! with a sparse LDLᵀ factorization and iterative refinement against the
//! unregularized matrix.

use super::cone::{blocks, max_step, soc_div, soc_prod, Block, Scaling};
use super::{Cone, ConicProgram, ConicSolution, ProgramError, Residuals, SolveStatus};
use crate::linalg::{dot, inf_norm, LdlFactor, LdlSymbolic};

/// Worst residual, x, y, z and the residuals of a stored iterate.
type Iterate = (f64, Vec<f64>, Vec<f64>, Vec<f64>, Residuals);

#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub static_reg: f64,
    pub refine_steps: usize,
    /// Threshold on normalized certificate residuals for infeasibility.
    pub tol_infeasible: f64,
    /// If progress stalls, the best iterate is accepted as optimal when all
    /// its residuals are below this.
    pub tol_reduced: f64,
    /// A breakdown without a certificate is retried this many times, each
    /// with ten times the previous static regularization.
    pub reg_retries: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: super::DEFAULT_TOL,
            max_iter: super::DEFAULT_MAX_ITER,
            static_reg: 1e-8,
            refine_steps: 6,
            tol_infeasible: 1e-8,
            tol_reduced: 1e-6,
            reg_retries: 2,
        }
    }
}

/// Solves `prog` to relative tolerance `tol` with default settings.
pub fn solve_socp(prog: &ConicProgram, tol: f64) -> Result<ConicSolution, ProgramError> {
    solve_socp_with(
        prog,
        &SolverSettings {
            tol,
            ..SolverSettings::default()
        },
    )
}

pub fn solve_socp_with(
    prog: &ConicProgram,
    settings: &SolverSettings,
) -> Result<ConicSolution, ProgramError> {
    prog.validate()?;
    if !(settings.tol > 0.0) {
        return Err(ProgramError::Shape("tolerance must be positive".into()));
    }
    let (first, mut certified) = Ipm::new(prog, settings).run();
    let mut sol = first;
    let mut s = settings.clone();
    for _ in 0..settings.reg_retries {
        if sol.status == SolveStatus::Optimal || certified {
            break;
        }
        s.static_reg *= 10.0;
        let (next, c) = Ipm::new(prog, &s).run();
        if next.status == SolveStatus::Optimal || c {
            (sol, certified) = (next, c);
        }
    }
    Ok(sol)
}

/// Pivots beyond this signal element growth after a regularized pivot; the
/// factor is rejected and rebuilt with more regularization.
const PIVOT_GROWTH_LIMIT: f64 = 1e20;

struct Kkt {
    n: usize,
    m: usize,
    entries: Vec<(usize, usize)>,
    /// Entry index of the diagonal for every variable.
    diag_x: Vec<usize>,
    /// For every SOC block: entry indices of its strict upper triangle, row-major.
    soc_upper: Vec<Vec<usize>>,
    a_first: usize,
    diag_y_first: usize,
    values: Vec<f64>,
    signs: Vec<i8>,
    factor: LdlFactor,
}

impl Kkt {
    fn new(prog: &ConicProgram, blocks: &[Block]) -> Self {
        let n = prog.n_vars;
        let m = prog.n_eq();
        let mut entries = Vec::new();
        let diag_x: Vec<usize> = (0..n)
            .map(|i| {
                entries.push((i, i));
                entries.len() - 1
            })
            .collect();
        let mut soc_upper = Vec::new();
        for b in blocks {
            if let Cone::SecondOrder(k) = b.kind {
                let mut idx = Vec::with_capacity(k * (k - 1) / 2);
                for i in 0..k {
                    for j in i + 1..k {
                        entries.push((b.start + i, b.start + j));
                        idx.push(entries.len() - 1);
                    }
                }
                soc_upper.push(idx);
            }
        }
        let a_first = entries.len();
        for j in 0..n {
            for (r, _) in prog.a.col(j) {
                entries.push((j, n + r));
            }
        }
        let diag_y_first = entries.len();
        for r in 0..m {
            entries.push((n + r, n + r));
        }
        let mut values = vec![0.0; entries.len()];
        for (e, (_, v)) in (a_first..).zip((0..n).flat_map(|j| prog.a.col(j))) {
            values[e] = v;
        }
        let signs: Vec<i8> = (0..n + m).map(|i| if i < n { 1 } else { -1 }).collect();
        let sym = LdlSymbolic::analyze(n + m, &entries);
        Self {
            n,
            m,
            entries,
            diag_x,
            soc_upper,
            a_first,
            diag_y_first,
            values,
            signs,
            factor: LdlFactor::new(sym),
        }
    }

    /// Loads `Q + H` (H given per block, dense row-major) and factors with
    /// static regularization `reg`.
    fn refactor(&mut self, q: &[f64], blocks: &[Block], h: &[Vec<f64>], reg: f64) -> bool {
        let mut soc_i = 0;
        for (b, hb) in blocks.iter().zip(h) {
            let k = b.len();
            for i in 0..k {
                let var = b.start + i;
                let qv = q.get(var).copied().unwrap_or(0.0);
                let hv = if hb.is_empty() { 0.0 } else { hb[i * k + i] };
                self.values[self.diag_x[var]] = qv + hv + reg;
            }
            if let Cone::SecondOrder(_) = b.kind {
                let idx = &self.soc_upper[soc_i];
                let mut t = 0;
                for i in 0..k {
                    for j in i + 1..k {
                        self.values[idx[t]] = hb[i * k + j];
                        t += 1;
                    }
                }
                soc_i += 1;
            }
        }
        for r in 0..self.m {
            self.values[self.diag_y_first + r] = -reg;
        }
        self.factor
            .factor(&self.values, &self.signs, 1e-13, reg.max(1e-10))
            .is_ok()
            && self.factor.max_pivot() < PIVOT_GROWTH_LIMIT
    }

    /// `out = K₀ v` where K₀ is the matrix without static regularization.
    fn mul_unreg(&self, v: &[f64], reg: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (e, &(i, j)) in self.entries.iter().enumerate() {
            let mut val = self.values[e];
            if i == j {
                if i < self.n {
                    val -= reg;
                } else {
                    val += reg;
                }
            }
            out[i] += val * v[j];
            if i != j {
                out[j] += val * v[i];
            }
        }
        let _ = self.a_first;
    }

    fn solve(&self, rhs: &[f64], reg: f64, refine: usize) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        self.factor.solve(&mut sol);
        let mut kx = vec![0.0; rhs.len()];
        let scale = 1.0 + inf_norm(rhs);
        self.mul_unreg(&sol, reg, &mut kx);
        let mut r: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
        let mut r_norm = inf_norm(&r);
        for _ in 0..refine {
            if !(r_norm > 1e-14 * scale) {
                break;
            }
            // Refinement can diverge when the regularization dominates; keep
            // the last correction only if it reduced the residual.
            self.factor.solve(&mut r);
            let trial: Vec<f64> = sol.iter().zip(&r).map(|(s, d)| s + d).collect();
            self.mul_unreg(&trial, reg, &mut kx);
            let rt: Vec<f64> = rhs.iter().zip(&kx).map(|(a, b)| a - b).collect();
            let rt_norm = inf_norm(&rt);
            if !(rt_norm < r_norm) {
                break;
            }
            sol = trial;
            r = rt;
            r_norm = rt_norm;
        }
        sol
    }
}

struct Ipm<'a> {
    prog: &'a ConicProgram,
    settings: &'a SolverSettings,
    blocks: Vec<Block>,
    degree: usize,
    kkt: Kkt,
    reg: f64,
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
}

impl<'a> Ipm<'a> {
    fn new(prog: &'a ConicProgram, settings: &'a SolverSettings) -> Self {
        let blocks = blocks(&prog.cones);
        let degree = blocks.iter().map(|b| b.degree()).sum();
        let kkt = Kkt::new(prog, &blocks);
        Self {
            prog,
            settings,
            blocks,
            degree,
            kkt,
            reg: settings.static_reg,
        }
    }

    fn n(&self) -> usize {
        self.prog.n_vars
    }

    fn m(&self) -> usize {
        self.prog.n_eq()
    }

    /// Shifts every cone block of `v` into the interior.
    fn push_interior(&self, v: &mut [f64]) {
        for b in &self.blocks {
            let r = b.range();
            match b.kind {
                Cone::Free(_) => {}
                Cone::NonNeg(_) => {
                    let min = v[r.clone()].iter().cloned().fold(f64::INFINITY, f64::min);
                    let shift = if min > 1e-3 { 0.0 } else { 1.0 - min };
                    v[r].iter_mut().for_each(|x| *x += shift);
                }
                Cone::SecondOrder(_) => {
                    let s = &v[r.clone()];
                    let tail = s[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                    let margin = s[0] - tail;
                    if margin <= 1e-3 {
                        v[b.start] += 1.0 - margin;
                    }
                }
            }
        }
    }

    fn initial_point(&mut self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n(), self.m());
        let ident: Vec<Vec<f64>> = self
            .blocks
            .iter()
            .map(|b| {
                let k = b.len();
                let mut h = vec![0.0; k * k];
                for i in 0..k {
                    h[i * k + i] = 1.0;
                }
                h
            })
            .collect();
        let zero_q: Vec<f64> = Vec::new();
        let ok = self.kkt.refactor(&zero_q, &self.blocks, &ident, self.reg);
        let (mut x, mut y, mut z) = (vec![0.0; n], vec![0.0; m], vec![0.0; n]);
        if ok {
            // least-norm x with Ax = b
            let mut rhs = vec![0.0; n + m];
            rhs[n..].copy_from_slice(&self.prog.b);
            let sol = self.kkt.solve(&rhs, self.reg, self.settings.refine_steps);
            x.copy_from_slice(&sol[..n]);
            // z = c − Aᵀy of least norm
            let mut rhs = vec![0.0; n + m];
            rhs[..n].copy_from_slice(&self.prog.c);
            let sol = self.kkt.solve(&rhs, self.reg, self.settings.refine_steps);
            z.copy_from_slice(&sol[..n]);
            y.copy_from_slice(&sol[n..n + m]);
        }
        self.push_interior(&mut x);
        for b in &self.blocks {
            if let Cone::Free(_) = b.kind {
                z[b.range()].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self.push_interior(&mut z);
        (x, y, z)
    }

    fn residuals(&self, x: &[f64], y: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.prog;
        let mut rp = vec![0.0; self.m()];
        p.a.mul_vec(x, &mut rp);
        for (r, b) in rp.iter_mut().zip(&p.b) {
            *r -= b;
        }
        let mut aty = vec![0.0; self.n()];
        p.a.mul_t_vec(y, &mut aty);
        let rd: Vec<f64> = (0..self.n())
            .map(|i| p.c[i] + p.quad(i) * x[i] - aty[i] - z[i])
            .collect();
        (rp, rd)
    }

    fn complementarity(&self, x: &[f64], z: &[f64]) -> f64 {
        self.blocks
            .iter()
            .filter(|b| !matches!(b.kind, Cone::Free(_)))
            .map(|b| dot(&x[b.range()], &z[b.range()]))
            .sum()
    }

    fn step_length(&self, x: &[f64], dx: &[f64], z: &[f64], dz: &[f64]) -> f64 {
        let mut a = f64::INFINITY;
        for b in &self.blocks {
            let r = b.range();
            a = a.min(max_step(b.kind, &x[r.clone()], &dx[r.clone()]));
            a = a.min(max_step(b.kind, &z[r.clone()], &dz[r]));
        }
        a
    }

    /// Solves the Newton system for residuals `(rp, rd)` and the scaled
    /// complementarity right-hand side `d` (already divided by λ).
    fn newton(&self, scalings: &[Scaling], rp: &[f64], rd: &[f64], d: &[f64]) -> Direction {
        let (n, m) = (self.n(), self.m());
        let mut rhs = vec![0.0; n + m];
        let mut winv_d = vec![0.0; n];
        for (b, s) in self.blocks.iter().zip(scalings) {
            let r = b.range();
            if let Cone::Free(_) = b.kind {
                continue;
            }
            s.apply_inv(&d[r.clone()], &mut winv_d[r]);
        }
        for i in 0..n {
            rhs[i] = -rd[i] + winv_d[i];
        }
        for i in 0..m {
            rhs[n + i] = -rp[i];
        }
        let sol = self.kkt.solve(&rhs, self.reg, self.settings.refine_steps);
        let dx = sol[..n].to_vec();
        let dy: Vec<f64> = sol[n..].iter().map(|v| -v).collect();
        let mut dz = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        for (b, s) in self.blocks.iter().zip(scalings) {
            let r = b.range();
            if let Cone::Free(_) = b.kind {
                continue;
            }
            // dz = W⁻¹ (d − W⁻¹ dx)
            s.apply_inv(&dx[r.clone()], &mut tmp[r.clone()]);
            let inner: Vec<f64> = d[r.clone()]
                .iter()
                .zip(&tmp[r.clone()])
                .map(|(a, b)| a - b)
                .collect();
            s.apply_inv(&inner, &mut dz[r]);
        }
        Direction { dx, dy, dz }
    }

    /// Returns the solution and whether its status rests on a certificate.
    fn run(mut self) -> (ConicSolution, bool) {
        let p = self.prog;
        let (n, m) = (self.n(), self.m());
        let tol = self.settings.tol;
        let (mut x, mut y, mut z) = self.initial_point();
        let b_norm = inf_norm(&p.b);
        let c_norm = inf_norm(&p.c);
        let mut status = SolveStatus::IterLimit;
        let mut certified = false;
        let mut iterations = 0;
        let mut small_steps = 0;
        let mut last = Residuals::default();
        let mut best: Option<Iterate> = None;

        for iter in 0..=self.settings.max_iter {
            iterations = iter;
            let (rp, rd) = self.residuals(&x, &y, &z);
            let gap = self.complementarity(&x, &z);
            let pobj = p.objective(&x);
            let res = Residuals {
                primal: inf_norm(&rp) / (1.0 + b_norm),
                dual: inf_norm(&rd) / (1.0 + c_norm),
                gap: gap.abs() / (1.0 + pobj.abs()),
            };
            last = res;
            let worst = res.primal.max(res.dual).max(res.gap);
            if worst.is_finite() && best.as_ref().is_none_or(|b| worst < b.0) {
                best = Some((worst, x.clone(), y.clone(), z.clone(), res));
            }
            if !res.primal.is_finite() || !res.dual.is_finite() || !res.gap.is_finite() {
                status = classify_breakdown(&last);
                break;
            }
            if res.primal <= tol && res.dual <= tol && res.gap <= tol {
                status = SolveStatus::Optimal;
                break;
            }
            if let Some(s) = self.certificate(&x, &y, &z) {
                status = s;
                certified = true;
                break;
            }
            if iter == self.settings.max_iter {
                break;
            }

            let scalings: Vec<Scaling> = self
                .blocks
                .iter()
                .map(|b| {
                    let r = b.range();
                    Scaling::compute(b.kind, &x[r.clone()], &z[r])
                })
                .collect();
            let mut lambda = vec![0.0; n];
            for (b, s) in self.blocks.iter().zip(&scalings) {
                let r = b.range();
                if let Cone::Free(_) = b.kind {
                    continue;
                }
                s.apply(&z[r.clone()], &mut lambda[r]);
            }
            let h: Vec<Vec<f64>> = self
                .blocks
                .iter()
                .zip(&scalings)
                .map(|(b, s)| match b.kind {
                    Cone::Free(_) => Vec::new(),
                    _ => s.inv_square(b.len()),
                })
                .collect();
            if !self.kkt.refactor(&p.q, &self.blocks, &h, self.reg) {
                self.reg *= 10.0;
                if self.reg > 1e-2 {
                    status = classify_breakdown(&last);
                    break;
                }
                continue;
            }

            // predictor
            let d_aff: Vec<f64> = lambda.iter().map(|v| -v).collect();
            let aff = self.newton(&scalings, &rp, &rd, &d_aff);
            let mu = if self.degree > 0 {
                gap / self.degree as f64
            } else {
                0.0
            };
            let sigma = if self.degree > 0 {
                let a_aff = self.step_length(&x, &aff.dx, &z, &aff.dz).min(1.0);
                let xa: Vec<f64> = x.iter().zip(&aff.dx).map(|(a, b)| a + a_aff * b).collect();
                let za: Vec<f64> = z.iter().zip(&aff.dz).map(|(a, b)| a + a_aff * b).collect();
                let mu_aff = self.complementarity(&xa, &za) / self.degree as f64;
                (mu_aff / mu).clamp(0.0, 1.0).powi(3)
            } else {
                0.0
            };

            // corrector: d = λ ⧵ (σμe − λ∘λ − (W⁻¹dx_a)∘(W dz_a))
            let mut d = vec![0.0; n];
            for (b, s) in self.blocks.iter().zip(&scalings) {
                let r = b.range();
                let k = b.len();
                match b.kind {
                    Cone::Free(_) => {}
                    Cone::NonNeg(_) => {
                        for i in r {
                            let wdx = aff.dx[i] / s_nn(s, i - b.start);
                            let wdz = aff.dz[i] * s_nn(s, i - b.start);
                            d[i] = (sigma * mu - lambda[i] * lambda[i] - wdx * wdz) / lambda[i];
                        }
                    }
                    Cone::SecondOrder(_) => {
                        let l = &lambda[r.clone()];
                        let mut wdx = vec![0.0; k];
                        let mut wdz = vec![0.0; k];
                        s.apply_inv(&aff.dx[r.clone()], &mut wdx);
                        s.apply(&aff.dz[r.clone()], &mut wdz);
                        let mut ll = vec![0.0; k];
                        let mut cc = vec![0.0; k];
                        soc_prod(l, l, &mut ll);
                        soc_prod(&wdx, &wdz, &mut cc);
                        let mut rc: Vec<f64> = (0..k).map(|i| -ll[i] - cc[i]).collect();
                        rc[0] += sigma * mu;
                        soc_div(l, &rc, &mut d[r]);
                    }
                }
            }
            let dir = self.newton(&scalings, &rp, &rd, &d);
            let alpha = if self.degree > 0 {
                (0.99 * self.step_length(&x, &dir.dx, &z, &dir.dz)).min(1.0)
            } else {
                1.0
            };
            if !alpha.is_finite()
                || dir
                    .dx
                    .iter()
                    .chain(&dir.dy)
                    .chain(&dir.dz)
                    .any(|v| !v.is_finite())
            {
                self.reg *= 10.0;
                if self.reg > 1e-2 {
                    status = classify_breakdown(&last);
                    break;
                }
                continue;
            }
            for i in 0..n {
                x[i] += alpha * dir.dx[i];
                z[i] += alpha * dir.dz[i];
            }
            for i in 0..m {
                y[i] += alpha * dir.dy[i];
            }
            if alpha < 1e-8 {
                small_steps += 1;
                if small_steps >= 5 {
                    status = classify_breakdown(&last);
                    break;
                }
            } else {
                small_steps = 0;
            }
        }

        if status != SolveStatus::Optimal && !certified {
            if let Some((worst, bx, by, bz, bres)) = best {
                if worst <= self.settings.tol_reduced.max(tol) {
                    (x, y, z, last, status) = (bx, by, bz, bres, SolveStatus::Optimal);
                }
            }
        }
        let obj = p.objective(&x);
        let quad: f64 = (0..n).map(|i| p.quad(i) * x[i] * x[i]).sum();
        let dual_obj = dot(&p.b, &y) - 0.5 * quad + p.offset;
        (
            ConicSolution {
                status,
                x,
                y,
                z,
                obj,
                dual_obj,
                residuals: last,
                iterations,
            },
            certified,
        )
    }

    /// Farkas-type certificates from the current iterate.
    fn certificate(&self, x: &[f64], y: &[f64], z: &[f64]) -> Option<SolveStatus> {
        let p = self.prog;
        let tol = self.settings.tol_infeasible;
        let by = dot(&p.b, y);
        let y_norm = inf_norm(y).max(inf_norm(z));
        if by > 0.0 && y_norm > 1e6 * (1.0 + inf_norm(&p.c)) {
            let mut aty = vec![0.0; self.n()];
            p.a.mul_t_vec(y, &mut aty);
            let r: Vec<f64> = aty.iter().zip(z).map(|(a, b)| a + b).collect();
            if inf_norm(&r) / by <= tol * (1.0 + inf_norm(&p.b)) {
                return Some(SolveStatus::Infeasible);
            }
        }
        let cx = dot(&p.c, x);
        let x_norm = inf_norm(x);
        if cx < 0.0 && x_norm > 1e6 * (1.0 + inf_norm(&p.b)) {
            let mut ax = vec![0.0; self.m()];
            p.a.mul_vec(x, &mut ax);
            let qx = (0..self.n())
                .map(|i| (p.quad(i) * x[i]).abs())
                .fold(0.0, f64::max);
            if inf_norm(&ax) / -cx <= tol * (1.0 + inf_norm(&p.c)) && qx / -cx <= tol {
                return Some(SolveStatus::Unbounded);
            }
        }
        None
    }
}

fn s_nn(s: &Scaling, i: usize) -> f64 {
    match s {
        Scaling::NonNeg { w } => w[i],
        _ => 1.0,
    }
}

/// When neither certificate is conclusive, the larger normalized residual
/// decides; ties go to `Infeasible`.
fn classify_breakdown(r: &Residuals) -> SolveStatus {
    let p = if r.primal.is_finite() {
        r.primal
    } else {
        f64::INFINITY
    };
    let d = if r.dual.is_finite() { r.dual } else { 0.0 };
    if p >= d {
        SolveStatus::Infeasible
    } else if d > 1e-6 {
        SolveStatus::Unbounded
    } else {
        SolveStatus::IterLimit
    }
}
