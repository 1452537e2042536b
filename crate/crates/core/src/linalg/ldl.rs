//! Sparse LDLᵀ factorization for quasi-definite systems.
//!
//! The numeric kernel follows the up-looking elimination-tree scheme used by
//! QDLDL. The symbolic phase (fill-reducing ordering, elimination tree, column
//! counts) runs once per pattern and is reused across numeric refactorizations.

use std::collections::BTreeSet;

const NONE: usize = usize::MAX;

/// Symbolic analysis of a symmetric pattern given as upper-triangle entries.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    /// `perm[k]` is the original index placed at position `k`.
    perm: Vec<usize>,
    ap: Vec<usize>,
    ai: Vec<usize>,
    /// Slot in the permuted value array for every input entry.
    map: Vec<usize>,
    etree: Vec<usize>,
    lnz: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    sym: LdlSymbolic,
    ax: Vec<f64>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    /// Number of pivots replaced by the dynamic regularization in the last factorization.
    pub regularized_pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum LdlError {
    #[error("zero pivot at position {0}")]
    ZeroPivot(usize),
}

impl LdlSymbolic {
    /// `entries` are `(row, col)` pairs of the upper triangle (`row <= col`);
    /// every diagonal entry must be present.
    pub fn analyze(n: usize, entries: &[(usize, usize)]) -> Self {
        let perm = minimum_degree_order(n, entries);
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }
        let mut permuted: Vec<(usize, usize, usize)> = entries
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| {
                let (pi, pj) = (iperm[i], iperm[j]);
                (pi.min(pj), pi.max(pj), e)
            })
            .collect();
        permuted.sort_by_key(|a| (a.1, a.0));
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(permuted.len());
        let mut map = vec![0usize; entries.len()];
        let mut last = None;
        for &(r, c, e) in &permuted {
            if last != Some((r, c)) {
                ai.push(r);
                ap[c + 1] += 1;
                last = Some((r, c));
            }
            map[e] = ai.len() - 1;
        }
        for j in 0..n {
            ap[j + 1] += ap[j];
        }
        let (etree, lnz) = elimination_tree(n, &ap, &ai);
        Self {
            n,
            perm,
            ap,
            ai,
            map,
            etree,
            lnz,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lnz.iter().sum()
    }
}

fn elimination_tree(n: usize, ap: &[usize], ai: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut work = vec![NONE; n];
    let mut lnz = vec![0usize; n];
    let mut etree = vec![NONE; n];
    for j in 0..n {
        work[j] = j;
        for &row in &ai[ap[j]..ap[j + 1]] {
            let mut i = row;
            debug_assert!(i <= j);
            while work[i] != j {
                if etree[i] == NONE {
                    etree[i] = j;
                }
                lnz[i] += 1;
                work[i] = j;
                i = etree[i];
            }
        }
    }
    (etree, lnz)
}

/// Greedy minimum-degree ordering with explicit fill tracking. Ties break on the
/// lowest index so the ordering is deterministic.
fn minimum_degree_order(n: usize, entries: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(i, j) in entries {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (k, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[k + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            queue.insert((adj[u].len(), u));
        }
    }
    order
}

impl LdlFactor {
    pub fn new(sym: LdlSymbolic) -> Self {
        let n = sym.n;
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + sym.lnz[i];
        }
        let total = lp[n];
        Self {
            ax: vec![0.0; sym.ai.len()],
            lp,
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            sym,
            regularized_pivots: 0,
        }
    }

    /// Numeric factorization. `values` follows the entry order given to
    /// [`LdlSymbolic::analyze`]; `signs[i]` is the expected pivot sign of the
    /// original index `i`. Pivots with the wrong sign or magnitude below `eps`
    /// are replaced by `signs[i] * delta`.
    pub fn factor(
        &mut self,
        values: &[f64],
        signs: &[i8],
        eps: f64,
        delta: f64,
    ) -> Result<(), LdlError> {
        let sym = &self.sym;
        let n = sym.n;
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (e, &v) in values.iter().enumerate() {
            self.ax[sym.map[e]] += v;
        }
        let psign: Vec<f64> = sym.perm.iter().map(|&p| signs[p] as f64).collect();

        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        self.regularized_pivots = 0;

        for k in 0..n {
            let mut nnz_y = 0usize;
            self.d[k] = 0.0;
            for p in sym.ap[k]..sym.ap[k + 1] {
                let bidx = sym.ai[p];
                if bidx == k {
                    self.d[k] = self.ax[p];
                    continue;
                }
                y_vals[bidx] = self.ax[p];
                let mut next = bidx;
                if !y_used[next] {
                    y_used[next] = true;
                    elim[0] = next;
                    let mut n_e = 1;
                    next = sym.etree[bidx];
                    while next != NONE && next < k {
                        if y_used[next] {
                            break;
                        }
                        y_used[next] = true;
                        elim[n_e] = next;
                        n_e += 1;
                        next = sym.etree[next];
                    }
                    while n_e > 0 {
                        n_e -= 1;
                        y_idx[nnz_y] = elim[n_e];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let cidx = y_idx[i];
                let tmp = next_space[cidx];
                let yc = y_vals[cidx];
                for j in self.lp[cidx]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                self.lx[tmp] = yc * self.dinv[cidx];
                self.d[k] -= yc * self.lx[tmp];
                next_space[cidx] += 1;
                y_vals[cidx] = 0.0;
                y_used[cidx] = false;
            }
            if psign[k] * self.d[k] < eps {
                self.d[k] = psign[k] * delta;
                self.regularized_pivots += 1;
            }
            if self.d[k] == 0.0 || !self.d[k].is_finite() {
                return Err(LdlError::ZeroPivot(k));
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(())
    }

    /// Largest pivot magnitude of the last factorization; infinite if any
    /// pivot is not finite.
    pub fn max_pivot(&self) -> f64 {
        self.d
            .iter()
            .try_fold(0.0f64, |m, v| v.is_finite().then(|| m.max(v.abs())))
            .unwrap_or(f64::INFINITY)
    }

    /// Solves in place: on return `b` holds the solution.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.sym.n;
        let perm = &self.sym.perm;
        let mut x: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.lp[i]..self.lp[i + 1] {
                    x[self.li[j]] -= self.lx[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                acc -= self.lx[j] * x[self.li[j]];
            }
            x[i] = acc;
        }
        for (k, &p) in perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}
