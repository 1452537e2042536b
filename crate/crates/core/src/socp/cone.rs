//! Cone algebra: Jordan products, Nesterov-Todd scaling and step lengths for
//! the nonnegative orthant and second-order cones.

use super::Cone;

/// One cone block with its offset in the variable vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Block {
    pub kind: Cone,
    pub start: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.kind.dim()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }

    /// Barrier degree contributed by this block.
    pub fn degree(&self) -> usize {
        match self.kind {
            Cone::Free(_) => 0,
            Cone::NonNeg(k) => k,
            Cone::SecondOrder(_) => 1,
        }
    }
}

pub(crate) fn blocks(cones: &[Cone]) -> Vec<Block> {
    let mut start = 0;
    cones
        .iter()
        .map(|&kind| {
            let b = Block { kind, start };
            start += kind.dim();
            b
        })
        .collect()
}

/// `det(u) = u0² − ‖ū‖²`, computed in factored form.
pub(crate) fn soc_det(u: &[f64]) -> f64 {
    let tail = u[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    (u[0] - tail) * (u[0] + tail)
}

pub(crate) fn soc_residual(u: &[f64]) -> f64 {
    let tail = u[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    u[0] - tail
}

/// Jordan product `u ∘ v` for a second-order cone block.
pub(crate) fn soc_prod(u: &[f64], v: &[f64], out: &mut [f64]) {
    out[0] = u.iter().zip(v).map(|(a, b)| a * b).sum();
    for i in 1..u.len() {
        out[i] = u[0] * v[i] + v[0] * u[i];
    }
}

/// Solves `λ ∘ w = r` for `w`.
pub(crate) fn soc_div(lambda: &[f64], r: &[f64], out: &mut [f64]) {
    let det = soc_det(lambda);
    let tail_dot: f64 = lambda[1..].iter().zip(&r[1..]).map(|(a, b)| a * b).sum();
    let w0 = (lambda[0] * r[0] - tail_dot) / det;
    out[0] = w0;
    for i in 1..lambda.len() {
        out[i] = (r[i] - w0 * lambda[i]) / lambda[0];
    }
}

/// Largest `α ≥ 0` such that `u + α d` stays in the cone (may be `+∞`).
pub(crate) fn max_step(kind: Cone, u: &[f64], d: &[f64]) -> f64 {
    match kind {
        Cone::Free(_) => f64::INFINITY,
        Cone::NonNeg(_) => u
            .iter()
            .zip(d)
            .filter(|(_, &di)| di < 0.0)
            .map(|(&ui, &di)| -ui / di)
            .fold(f64::INFINITY, f64::min),
        Cone::SecondOrder(_) => soc_max_step(u, d),
    }
}

fn soc_max_step(u: &[f64], d: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    if d[0] < 0.0 {
        alpha = -u[0] / d[0];
    }
    let a = d[0] * d[0] - d[1..].iter().map(|v| v * v).sum::<f64>();
    let b = u[0] * d[0] - u[1..].iter().zip(&d[1..]).map(|(x, y)| x * y).sum::<f64>();
    let c = soc_det(u).max(0.0);
    // roots of a α² + 2 b α + c
    let disc = b * b - a * c;
    let mut roots = [f64::NAN, f64::NAN];
    if a.abs() <= 1e-300 {
        if b < 0.0 {
            roots[0] = -c / (2.0 * b);
        }
    } else if disc >= 0.0 {
        let q = -(b + b.signum() * disc.sqrt());
        roots[0] = q / a;
        if q != 0.0 {
            roots[1] = c / q;
        }
    }
    for r in roots {
        if r.is_finite() && r > 0.0 {
            alpha = alpha.min(r);
        }
    }
    alpha
}

/// Nesterov-Todd scaling of one block: `λ = W z = W⁻¹ x`.
#[derive(Debug, Clone)]
pub(crate) enum Scaling {
    Free,
    /// `w = sqrt(x / z)` elementwise.
    NonNeg {
        w: Vec<f64>,
    },
    /// `W = β (2 v vᵀ − J)` with `vᵀ J v = 1`.
    Soc {
        beta: f64,
        v: Vec<f64>,
    },
}

impl Scaling {
    pub fn compute(kind: Cone, x: &[f64], z: &[f64]) -> Self {
        match kind {
            Cone::Free(_) => Scaling::Free,
            Cone::NonNeg(_) => Scaling::NonNeg {
                w: x.iter().zip(z).map(|(a, b)| (a / b).sqrt()).collect(),
            },
            Cone::SecondOrder(_) => {
                let dx = soc_det(x);
                let dz = soc_det(z);
                let sx = dx.sqrt();
                let sz = dz.sqrt();
                let xn: Vec<f64> = x.iter().map(|v| v / sx).collect();
                let zn: Vec<f64> = z.iter().map(|v| v / sz).collect();
                let gamma =
                    ((1.0 + xn.iter().zip(&zn).map(|(a, b)| a * b).sum::<f64>()) / 2.0).sqrt();
                let mut w: Vec<f64> = Vec::with_capacity(x.len());
                w.push((xn[0] + zn[0]) / (2.0 * gamma));
                for i in 1..x.len() {
                    w.push((xn[i] - zn[i]) / (2.0 * gamma));
                }
                let denom = (2.0 * (w[0] + 1.0)).sqrt();
                let mut v: Vec<f64> = w.iter().map(|wi| wi / denom).collect();
                v[0] += 1.0 / denom;
                Scaling::Soc {
                    beta: (dx / dz).sqrt().sqrt(),
                    v,
                }
            }
        }
    }

    /// `out = W u` (identity for free blocks).
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Free => out.copy_from_slice(u),
            Scaling::NonNeg { w } => {
                for i in 0..u.len() {
                    out[i] = w[i] * u[i];
                }
            }
            Scaling::Soc { beta, v } => quad_rep(*beta, v, false, u, out),
        }
    }

    /// `out = W⁻¹ u`.
    pub fn apply_inv(&self, u: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Free => out.copy_from_slice(u),
            Scaling::NonNeg { w } => {
                for i in 0..u.len() {
                    out[i] = u[i] / w[i];
                }
            }
            Scaling::Soc { beta, v } => quad_rep(1.0 / beta, v, true, u, out),
        }
    }

    /// Dense `W⁻²` for the block, row-major `k × k` (diagonal for the orthant).
    pub fn inv_square(&self, k: usize) -> Vec<f64> {
        let mut h = vec![0.0; k * k];
        match self {
            Scaling::Free => {}
            Scaling::NonNeg { w } => {
                for i in 0..k {
                    h[i * k + i] = 1.0 / (w[i] * w[i]);
                }
            }
            Scaling::Soc { .. } => {
                let mut col = vec![0.0; k];
                let mut tmp = vec![0.0; k];
                let mut e = vec![0.0; k];
                for j in 0..k {
                    e.iter_mut().for_each(|v| *v = 0.0);
                    e[j] = 1.0;
                    self.apply_inv(&e, &mut tmp);
                    self.apply_inv(&tmp, &mut col);
                    for i in 0..k {
                        h[i * k + j] = col[i];
                    }
                }
                // symmetrize round-off
                for i in 0..k {
                    for j in i + 1..k {
                        let m = 0.5 * (h[i * k + j] + h[j * k + i]);
                        h[i * k + j] = m;
                        h[j * k + i] = m;
                    }
                }
            }
        }
        h
    }
}

/// `out = scale · (2 ṽ ṽᵀ − J) u` with `ṽ = v` or `ṽ = J v` when `reflect`.
fn quad_rep(scale: f64, v: &[f64], reflect: bool, u: &[f64], out: &mut [f64]) {
    let sign = if reflect { -1.0 } else { 1.0 };
    let vt = |i: usize| if i == 0 { v[0] } else { sign * v[i] };
    let dot: f64 = (0..u.len()).map(|i| vt(i) * u[i]).sum();
    out[0] = scale * (2.0 * vt(0) * dot - u[0]);
    for i in 1..u.len() {
        out[i] = scale * (2.0 * vt(i) * dot + u[i]);
    }
}
