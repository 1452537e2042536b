//! Branch-and-bound over binary variables, with conic relaxations solved by
//! [`crate::socp`], and a round-and-repair heuristic.

use crate::socp::{
    solve_socp, Cone, ConicProgram, ConicSolution, FixedProgram, ProgramError, SolveStatus,
};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

pub const DEFAULT_MIP_GAP: f64 = 1e-6;
pub const DEFAULT_NODE_LIMIT: usize = 50_000;
const INT_TOL: f64 = 1e-6;
const RELAX_TOL: f64 = 1e-9;

/// Structural hints used by the repair heuristic. They never change the
/// feasible set, only how a fractional point is rounded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RepairHints {
    /// `(binary, gated)`: the continuous `gated` variable may be positive only if `binary` is 1.
    pub gates: Vec<(usize, usize)>,
    /// Pairs of binaries that may not both be 1.
    pub exclusive: Vec<(usize, usize)>,
    /// Groups of binaries with at most `k` ones.
    pub cardinality: Vec<(Vec<usize>, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBinaryProgram {
    /// Continuous relaxation; every binary lives in a nonnegative block and is
    /// bounded by 1 through the equality rows.
    pub relaxation: ConicProgram,
    pub binary_indices: Vec<usize>,
    pub hints: RepairHints,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MiqpError {
    #[error("binary index {0} is not in a nonnegative block")]
    NotNonNeg(usize),
    #[error("mip_gap must be positive")]
    BadGap,
    #[error(transparent)]
    Program(#[from] ProgramError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnBResult {
    pub status: SolveStatus,
    pub x_incumbent: Option<Vec<f64>>,
    pub obj_incumbent: f64,
    pub best_bound: f64,
    /// `|best_bound − incumbent| / (1 + |incumbent|)`; infinite without an incumbent.
    pub gap: f64,
    pub nodes_explored: usize,
    /// Nodes whose relaxation ended without a verdict and were dropped.
    pub failed_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairResult {
    pub x: Vec<f64>,
    pub obj: f64,
    pub relaxation_obj: f64,
    /// True when rounding failed and branch-and-bound produced the point.
    pub used_fallback: bool,
}

impl MixedBinaryProgram {
    pub fn validate(&self) -> Result<(), MiqpError> {
        self.relaxation.validate()?;
        let cones = self.relaxation.var_cones();
        for &b in &self.binary_indices {
            if !matches!(cones.get(b), Some(Cone::NonNeg(_))) {
                return Err(MiqpError::NotNonNeg(b));
            }
        }
        Ok(())
    }

    /// Solves the relaxation with the listed binaries fixed. Returns the
    /// solution expanded to full length, or `None` when fixing is infeasible.
    pub fn solve_fixed(
        &self,
        fixings: &[(usize, f64)],
    ) -> Result<Option<ConicSolution>, MiqpError> {
        let mut f = FixedProgram::new(&self.relaxation);
        for &(j, v) in fixings {
            f.fix(j, v).map_err(|_| MiqpError::NotNonNeg(j))?;
        }
        let red = match f.reduce() {
            Ok(r) => r,
            Err(_) => return Ok(None),
        };
        let sol = solve_socp(&red.program, RELAX_TOL)?;
        Ok(Some(red.expand(&sol)))
    }

    fn is_integral(&self, x: &[f64]) -> bool {
        self.binary_indices
            .iter()
            .all(|&b| x[b].min(1.0 - x[b]).abs() <= INT_TOL)
    }

    /// Rounds binaries of a relaxed point according to the hints.
    pub fn round(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut val: std::collections::BTreeMap<usize, f64> = self
            .binary_indices
            .iter()
            .map(|&b| (b, if x[b] >= 0.5 { 1.0 } else { 0.0 }))
            .collect();
        for &(b, g) in &self.hints.gates {
            if x[g] > 1e-7 {
                val.insert(b, 1.0);
            }
        }
        for &(a, b) in &self.hints.exclusive {
            if val[&a] == 1.0 && val[&b] == 1.0 {
                let drop = if x[b] > x[a] { a } else { b };
                val.insert(drop, 0.0);
            }
        }
        for (group, k) in &self.hints.cardinality {
            let mut on: Vec<usize> = group.iter().copied().filter(|b| val[b] == 1.0).collect();
            if on.len() > *k {
                on.sort_by(|&p, &q| x[q].total_cmp(&x[p]).then(p.cmp(&q)));
                for &b in &on[*k..] {
                    val.insert(b, 0.0);
                }
            }
        }
        val.into_iter().collect()
    }

    fn repair_point(&self, x: &[f64]) -> Result<Option<(Vec<f64>, f64)>, MiqpError> {
        let fix = self.round(x);
        Ok(self
            .solve_fixed(&fix)?
            .filter(|s| s.is_optimal())
            .map(|s| (s.x, s.obj)))
    }
}

#[derive(Debug)]
struct Node {
    bound: f64,
    seq: usize,
    fixings: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // reversed: the heap pops the smallest bound, then the oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.seq.cmp(&self.seq))
    }
}

fn rel_gap(bound: f64, inc: f64) -> f64 {
    if inc.is_finite() {
        ((inc - bound).max(0.0)) / (1.0 + inc.abs())
    } else {
        f64::INFINITY
    }
}

/// Best-first branch-and-bound, branching on the most fractional binary
/// (lowest index on ties).
pub fn solve_mbp(
    prob: &MixedBinaryProgram,
    mip_gap: f64,
    node_limit: usize,
) -> Result<BnBResult, MiqpError> {
    prob.validate()?;
    if !(mip_gap > 0.0) {
        return Err(MiqpError::BadGap);
    }
    let mut sorted = prob.binary_indices.clone();
    sorted.sort_unstable();
    let mut incumbent: Option<Vec<f64>> = None;
    let mut inc_obj = f64::INFINITY;
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixings: Vec::new(),
    });
    let mut explored = 0;
    let mut failed = 0;
    let mut root_status = None;

    while let Some(node) = heap.peek() {
        if rel_gap(node.bound, inc_obj) <= mip_gap {
            break;
        }
        if explored >= node_limit {
            break;
        }
        let node = heap.pop().unwrap();
        explored += 1;
        let sol = match prob.solve_fixed(&node.fixings)? {
            Some(s) => s,
            None => {
                root_status.get_or_insert(SolveStatus::Infeasible);
                continue;
            }
        };
        root_status.get_or_insert(sol.status);
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => continue,
            SolveStatus::Unbounded if node.fixings.is_empty() => break,
            _ => {
                failed += 1;
                continue;
            }
        }
        let bound = sol.obj.max(node.bound);
        if rel_gap(bound, inc_obj) <= mip_gap {
            continue;
        }
        if prob.is_integral(&sol.x) {
            if let Some((x, obj)) = prob.repair_point(&sol.x)? {
                if obj < inc_obj {
                    inc_obj = obj;
                    incumbent = Some(x);
                }
            }
            continue;
        }
        if node.fixings.is_empty() || explored % 16 == 1 {
            if let Some((x, obj)) = prob.repair_point(&sol.x)? {
                if obj < inc_obj {
                    inc_obj = obj;
                    incumbent = Some(x);
                }
            }
            if rel_gap(bound, inc_obj) <= mip_gap {
                continue;
            }
        }
        let branch = sorted
            .iter()
            .copied()
            .filter(|b| !node.fixings.iter().any(|(j, _)| j == b))
            .map(|b| (b, sol.x[b].min(1.0 - sol.x[b])))
            .fold(None, |best: Option<(usize, f64)>, (b, f)| match best {
                Some((_, bf)) if bf >= f => best,
                _ => Some((b, f)),
            });
        let Some((b, _)) = branch else { continue };
        for v in [0.0, 1.0] {
            seq += 1;
            let mut fixings = node.fixings.clone();
            fixings.push((b, v));
            heap.push(Node {
                bound,
                seq,
                fixings,
            });
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let best_bound = open_bound.min(inc_obj);
    let gap = rel_gap(best_bound, inc_obj);
    let status = match (&incumbent, root_status) {
        (_, Some(SolveStatus::Unbounded)) => SolveStatus::Unbounded,
        (Some(_), _) if heap.is_empty() || gap <= mip_gap => SolveStatus::Optimal,
        (None, _) if heap.is_empty() && failed == 0 => SolveStatus::Infeasible,
        _ => SolveStatus::IterLimit,
    };
    Ok(BnBResult {
        status,
        x_incumbent: incumbent,
        obj_incumbent: inc_obj,
        best_bound,
        gap,
        nodes_explored: explored,
        failed_nodes: failed,
    })
}

/// Solves the relaxation, rounds (threshold 0.5, gated flows force their
/// binary on, exclusive pairs keep the larger, cardinality groups keep the
/// largest) and re-solves the continuous part. Falls back to
/// [`solve_mbp`] with default limits when the rounded point is infeasible.
pub fn relax_and_repair(prob: &MixedBinaryProgram) -> Result<Option<RepairResult>, MiqpError> {
    prob.validate()?;
    let relax = solve_socp(&prob.relaxation, RELAX_TOL)?;
    if !relax.is_optimal() {
        return Ok(None);
    }
    if let Some((x, obj)) = prob.repair_point(&relax.x)? {
        return Ok(Some(RepairResult {
            x,
            obj,
            relaxation_obj: relax.obj,
            used_fallback: false,
        }));
    }
    let bnb = solve_mbp(prob, DEFAULT_MIP_GAP, DEFAULT_NODE_LIMIT)?;
    Ok(bnb.x_incumbent.map(|x| RepairResult {
        x,
        obj: bnb.obj_incumbent,
        relaxation_obj: relax.obj,
        used_fallback: true,
    }))
}
