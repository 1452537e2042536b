//! LMO agent: auxiliary copies of prosumer injections and losses, the two
//! multiplier vectors, and the prosumer/bus maps.
//!
//! With the upstream exchange eliminated through the market balance
//! `p_ug = Σ_a p̃_a + background + p̃_loss`, the LMO problem separates per
//! prosumer and hour and has the closed form
//! `p̃ = p* − (λ_wem Δt + λ_p) / ρ`.

use crate::model::AdmmConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmoError {
    #[error("penalty parameters must be positive (rho {rho}, rho_prime {rho_prime})")]
    NonPositiveRho { rho: f64, rho_prime: f64 },
    #[error("prosumer {0} is mapped to bus index {1}, which does not exist")]
    UnmappedProsumer(usize, usize),
    #[error("no price for bus index {0}")]
    MissingBusPrice(usize),
    #[error("input shape: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmoState {
    /// `[prosumer][t]`
    pub lambda_p: Vec<Vec<f64>>,
    pub lambda_loss: Vec<f64>,
    pub p_tilde: Vec<Vec<f64>>,
    pub p_loss_tilde: Vec<f64>,
    /// Bus index of each prosumer.
    pub psi: Vec<usize>,
    /// Prosumers at each bus, in prosumer order.
    pub psi_prime: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmoSolution {
    pub p_tilde: Vec<Vec<f64>>,
    pub p_loss_tilde: Vec<f64>,
    pub p_ug: Vec<f64>,
}

/// Bus → prosumer relation, the transpose of `psi`.
pub fn transpose_map(psi: &[usize], n_buses: usize) -> Result<Vec<Vec<usize>>, LmoError> {
    let mut out = vec![Vec::new(); n_buses];
    for (a, &n) in psi.iter().enumerate() {
        out.get_mut(n)
            .ok_or(LmoError::UnmappedProsumer(a, n))?
            .push(a);
    }
    Ok(out)
}

impl LmoState {
    /// Multipliers start at `cfg` values when given, otherwise at `−λ_wem Δt`,
    /// where the LMO is indifferent to the auxiliary copies.
    pub fn new(
        psi: Vec<usize>,
        n_buses: usize,
        wem_price: &[f64],
        dt: f64,
        cfg: &AdmmConfig,
    ) -> Result<Self, LmoError> {
        let psi_prime = transpose_map(&psi, n_buses)?;
        let t = wem_price.len();
        let neutral: Vec<f64> = wem_price.iter().map(|w| -w * dt).collect();
        let init = |v: Option<f64>| v.map_or_else(|| neutral.clone(), |x| vec![x; t]);
        Ok(Self {
            lambda_p: vec![init(cfg.lambda_p_init); psi.len()],
            lambda_loss: init(cfg.lambda_loss_init),
            p_tilde: vec![vec![0.0; t]; psi.len()],
            p_loss_tilde: vec![0.0; t],
            psi,
            psi_prime,
        })
    }

    pub fn n_prosumers(&self) -> usize {
        self.psi.len()
    }

    pub fn horizon(&self) -> usize {
        self.lambda_loss.len()
    }
}

fn check_rho(cfg: &AdmmConfig) -> Result<(), LmoError> {
    if cfg.rho > 0.0 && cfg.rho_prime > 0.0 {
        Ok(())
    } else {
        Err(LmoError::NonPositiveRho {
            rho: cfg.rho,
            rho_prime: cfg.rho_prime,
        })
    }
}

/// Stationary point of the LMO augmented Lagrangian. `background[t]` is the
/// non-participating load that also crosses the PCC.
pub fn solve_subproblem_i(
    state: &LmoState,
    wem_price: &[f64],
    dt: f64,
    background: &[f64],
    p_net_star: &[Vec<f64>],
    p_loss_star: &[f64],
    cfg: &AdmmConfig,
) -> Result<LmoSolution, LmoError> {
    check_rho(cfg)?;
    let th = state.horizon();
    if p_net_star.len() != state.n_prosumers()
        || p_net_star.iter().any(|r| r.len() != th)
        || [wem_price.len(), background.len(), p_loss_star.len()]
            .iter()
            .any(|&l| l != th)
    {
        return Err(LmoError::Shape(format!(
            "{} prosumers × {th} hours",
            state.n_prosumers()
        )));
    }
    let p_tilde: Vec<Vec<f64>> = p_net_star
        .iter()
        .zip(&state.lambda_p)
        .map(|(p, lam)| {
            (0..th)
                .map(|t| p[t] - (wem_price[t] * dt + lam[t]) / cfg.rho)
                .collect()
        })
        .collect();
    let p_loss_tilde: Vec<f64> = (0..th)
        .map(|t| p_loss_star[t] - (wem_price[t] * dt + state.lambda_loss[t]) / cfg.rho_prime)
        .collect();
    let p_ug = (0..th)
        .map(|t| p_tilde.iter().map(|r| r[t]).sum::<f64>() + background[t] + p_loss_tilde[t])
        .collect();
    Ok(LmoSolution {
        p_tilde,
        p_loss_tilde,
        p_ug,
    })
}

/// LMO augmented Lagrangian at a candidate point, with `p_ug` from the balance.
#[allow(clippy::too_many_arguments)]
pub fn subproblem_i_objective(
    state: &LmoState,
    wem_price: &[f64],
    dt: f64,
    background: &[f64],
    p_net_star: &[Vec<f64>],
    p_loss_star: &[f64],
    cfg: &AdmmConfig,
    p_tilde: &[Vec<f64>],
    p_loss_tilde: &[f64],
) -> f64 {
    let mut v = 0.0;
    for t in 0..state.horizon() {
        let mut p_ug = background[t] + p_loss_tilde[t];
        for a in 0..state.n_prosumers() {
            let r = p_tilde[a][t] - p_net_star[a][t];
            p_ug += p_tilde[a][t];
            v += state.lambda_p[a][t] * r + 0.5 * cfg.rho * r * r;
        }
        let r = p_loss_tilde[t] - p_loss_star[t];
        v += state.lambda_loss[t] * r + 0.5 * cfg.rho_prime * r * r;
        v += wem_price[t] * dt * p_ug;
    }
    v
}

/// Nodal net consumption: co-located prosumers summed, plus background.
pub fn aggregate_to_nodes(
    psi: &[usize],
    p_net: &[Vec<f64>],
    background: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, LmoError> {
    if p_net.len() != psi.len() {
        return Err(LmoError::Shape(format!(
            "{} prosumers, {} series",
            psi.len(),
            p_net.len()
        )));
    }
    let mut out = background.to_vec();
    for (a, (&n, row)) in psi.iter().zip(p_net).enumerate() {
        let node = out.get_mut(n).ok_or(LmoError::UnmappedProsumer(a, n))?;
        if node.len() != row.len() {
            return Err(LmoError::Shape(format!(
                "prosumer {a} has {} hours, bus has {}",
                row.len(),
                node.len()
            )));
        }
        for (x, p) in node.iter_mut().zip(row) {
            *x += p;
        }
    }
    Ok(out)
}

/// Each prosumer receives the price of its own bus.
pub fn map_dlmp_to_prosumers(psi: &[usize], dlmp: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LmoError> {
    psi.iter()
        .map(|&n| dlmp.get(n).cloned().ok_or(LmoError::MissingBusPrice(n)))
        .collect()
}

/// `λ_p + ρ (p̃ − p)` elementwise.
pub fn update_power_dual(
    lambda_p: &[Vec<f64>],
    p_tilde: &[Vec<f64>],
    p_net: &[Vec<f64>],
    rho: f64,
) -> Vec<Vec<f64>> {
    lambda_p
        .iter()
        .zip(p_tilde.iter().zip(p_net))
        .map(|(lam, (pt, p))| ascend(lam, pt, p, rho))
        .collect()
}

/// `λ_loss + ρ′ (p̃_loss − p_loss)` elementwise.
pub fn update_loss_dual(
    lambda_loss: &[f64],
    p_loss_tilde: &[f64],
    p_loss: &[f64],
    rho_prime: f64,
) -> Vec<f64> {
    ascend(lambda_loss, p_loss_tilde, p_loss, rho_prime)
}

fn ascend(lam: &[f64], tilde: &[f64], actual: &[f64], rho: f64) -> Vec<f64> {
    lam.iter()
        .zip(tilde.iter().zip(actual))
        .map(|(l, (pt, p))| l + rho * (pt - p))
        .collect()
}
