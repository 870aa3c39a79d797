//! Transportation simplex on the complete bipartite graph rows × columns.
//!
//! A basis is a spanning tree with exactly `n + p − 1` cells. Node potentials satisfy
//! `u_i + v_j = C_ij` on tree cells; a nonbasic cell with negative reduced cost
//! `C_ij − u_i − v_j` enters, flow is pushed around the unique tree cycle, and a blocking
//! cell leaves. Runs of degenerate pivots switch pricing to Bland's rule (lowest cell index
//! enters, lowest cell index among ties leaves), which rules out cycling.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{check_cost, check_marginals, TransportPlanResult, EXACT_SIZE_LIMIT};
use crate::measures::{marginal_tol, Coupling};
use crate::{Error, Result, Scalar};

/// Entering-cell rule outside degenerate streaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pricing {
    /// Most negative reduced cost within a rotating block of about `√(n·p)` cells.
    #[default]
    Block,
    /// Most negative reduced cost over all cells.
    Dantzig,
    /// Lowest-index cell with negative reduced cost, always.
    Bland,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    pub pricing: Pricing,
    /// Pivot budget; `None` picks a generous multiple of the problem size.
    pub max_pivots: Option<usize>,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            pricing: Pricing::Block,
            max_pivots: None,
        }
    }
}

/// Exact optimum of `min Σ Γ_ij C_ij` subject to `Γ 1 = a`, `Γᵀ 1 = b`, `Γ ≥ 0`.
pub fn solve_kantorovich<T: Scalar>(
    cost: ArrayView2<'_, T>,
    a: ArrayView1<'_, T>,
    b: ArrayView1<'_, T>,
) -> Result<TransportPlanResult<T>> {
    solve_kantorovich_with(cost, a, b, &SimplexOptions::default())
}

pub fn solve_kantorovich_with<T: Scalar>(
    cost: ArrayView2<'_, T>,
    a: ArrayView1<'_, T>,
    b: ArrayView1<'_, T>,
    opts: &SimplexOptions,
) -> Result<TransportPlanResult<T>> {
    let (n, p) = (a.len(), b.len());
    let cells = n.saturating_mul(p);
    if cells > EXACT_SIZE_LIMIT {
        return Err(Error::SizeGuard {
            cells,
            limit: EXACT_SIZE_LIMIT,
        });
    }
    check_marginals(a, b)?;
    check_cost(&cost, n, p)?;

    let mut tree = Tree::northwest(a, b);
    let cmax = cost.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let price_tol = T::lit(1e-12).max(T::lit(64.0) * T::epsilon()) * (T::one() + cmax);
    let budget = opts.max_pivots.unwrap_or(10_000 + 50 * (n + p) * (n + p).min(1 << 12));
    let block = ((cells as f64).sqrt().ceil() as usize).clamp(1, cells);
    let mut cursor = 0usize;
    let mut degenerate_run = 0usize;
    let mut pivots = 0usize;
    loop {
        tree.compute_potentials(&cost);
        let bland = opts.pricing == Pricing::Bland || degenerate_run > n + p;
        let entering = if bland {
            tree.first_negative(&cost, price_tol)
        } else if opts.pricing == Pricing::Dantzig {
            tree.most_negative(&cost, price_tol, 0, cells)
        } else {
            tree.block_search(&cost, price_tol, &mut cursor, block)
        };
        let Some((ei, ej)) = entering else { break };
        if pivots >= budget {
            return Err(Error::NotConverged {
                solver: "network simplex",
                iterations: pivots,
                residual: 0.0,
            });
        }
        pivots += 1;
        let theta = tree.pivot(ei, ej);
        if theta > T::zero() {
            degenerate_run = 0;
        } else {
            degenerate_run += 1;
        }
    }

    let mut mass = Array2::zeros((n, p));
    for (&(i, j), &f) in tree.cells.iter().zip(&tree.flow) {
        mass[[i, j]] += f;
    }
    let coupling = Coupling::with_tolerance(mass, a.to_owned(), b.to_owned(), marginal_tol())?;
    let objective = coupling.cost(cost);
    Ok(TransportPlanResult {
        coupling,
        objective,
        exact: true,
        converged: true,
        iterations: pivots,
    })
}

const NONE: usize = usize::MAX;

/// Spanning-tree basis. Nodes `0..n` are rows, `n..n+p` columns; `slot_of[i*p + j]` is the
/// basis slot of cell `(i, j)` or `NONE`.
struct Tree<T> {
    n: usize,
    p: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<T>,
    slot_of: Vec<usize>,
    adj: Vec<Vec<usize>>,
    parent_slot: Vec<usize>,
    parent: Vec<usize>,
    depth: Vec<usize>,
    u: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Tree<T> {
    /// Northwest corner basis: walks from `(0, 0)` to `(n−1, p−1)` advancing exactly one
    /// index per cell, so degenerate steps still yield `n + p − 1` cells.
    fn northwest(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Self {
        let (n, p) = (a.len(), b.len());
        let mut tree = Self {
            n,
            p,
            cells: Vec::with_capacity(n + p - 1),
            flow: Vec::with_capacity(n + p - 1),
            slot_of: vec![NONE; n * p],
            adj: vec![Vec::new(); n + p],
            parent_slot: vec![NONE; n + p],
            parent: vec![NONE; n + p],
            depth: vec![0; n + p],
            u: vec![T::zero(); n],
            v: vec![T::zero(); p],
        };
        let (mut i, mut j) = (0, 0);
        let (mut ra, mut rb) = (a[0], b[0]);
        loop {
            let q = ra.min(rb);
            tree.push(i, j, q);
            ra -= q;
            rb -= q;
            if i == n - 1 && j == p - 1 {
                break;
            }
            if (ra <= rb && i < n - 1) || j == p - 1 {
                i += 1;
                ra = a[i];
            } else {
                j += 1;
                rb = b[j];
            }
        }
        tree
    }

    fn push(&mut self, i: usize, j: usize, q: T) {
        let s = self.cells.len();
        self.cells.push((i, j));
        self.flow.push(q);
        self.slot_of[i * self.p + j] = s;
        self.adj[i].push(s);
        self.adj[self.n + j].push(s);
    }

    /// Roots the tree at row 0 and solves for potentials with `u_0 = 0`.
    fn compute_potentials(&mut self, cost: &ArrayView2<'_, T>) {
        let n = self.n;
        self.parent.fill(NONE);
        self.parent_slot.fill(NONE);
        let mut seen = vec![false; n + self.p];
        let mut queue = VecDeque::with_capacity(n + self.p);
        seen[0] = true;
        self.depth[0] = 0;
        self.u[0] = T::zero();
        queue.push_back(0);
        while let Some(node) = queue.pop_front() {
            for &s in &self.adj[node] {
                let (i, j) = self.cells[s];
                let other = if node < n { n + j } else { i };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                self.parent[other] = node;
                self.parent_slot[other] = s;
                self.depth[other] = self.depth[node] + 1;
                if other >= n {
                    self.v[j] = cost[[i, j]] - self.u[i];
                } else {
                    self.u[i] = cost[[i, j]] - self.v[j];
                }
                queue.push_back(other);
            }
        }
    }

    #[inline]
    fn reduced(&self, cost: &ArrayView2<'_, T>, i: usize, j: usize) -> T {
        cost[[i, j]] - self.u[i] - self.v[j]
    }

    fn first_negative(&self, cost: &ArrayView2<'_, T>, tol: T) -> Option<(usize, usize)> {
        for i in 0..self.n {
            for j in 0..self.p {
                if self.slot_of[i * self.p + j] == NONE && self.reduced(cost, i, j) < -tol {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Most negative reduced cost over linear cell indices `start..end`.
    fn most_negative(&self, cost: &ArrayView2<'_, T>, tol: T, start: usize, end: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, T)> = None;
        for k in start..end {
            if self.slot_of[k] != NONE {
                continue;
            }
            let r = self.reduced(cost, k / self.p, k % self.p);
            if r < -tol && best.is_none_or(|(_, br)| r < br) {
                best = Some((k, r));
            }
        }
        best.map(|(k, _)| (k / self.p, k % self.p))
    }

    fn block_search(&self, cost: &ArrayView2<'_, T>, tol: T, cursor: &mut usize, block: usize) -> Option<(usize, usize)> {
        let cells = self.n * self.p;
        let mut scanned = 0;
        while scanned < cells {
            let start = *cursor;
            let end = (start + block).min(cells);
            scanned += end - start;
            *cursor = if end == cells { 0 } else { end };
            if let Some(hit) = self.most_negative(cost, tol, start, end) {
                return Some(hit);
            }
        }
        None
    }

    /// Tree path from row node `ei` to column node `n + ej`, as basis slots in order.
    fn path(&self, ei: usize, ej: usize) -> Vec<usize> {
        let (mut r, mut s) = (ei, self.n + ej);
        let mut from_r = Vec::new();
        let mut from_s = Vec::new();
        while self.depth[r] > self.depth[s] {
            from_r.push(self.parent_slot[r]);
            r = self.parent[r];
        }
        while self.depth[s] > self.depth[r] {
            from_s.push(self.parent_slot[s]);
            s = self.parent[s];
        }
        while r != s {
            from_r.push(self.parent_slot[r]);
            r = self.parent[r];
            from_s.push(self.parent_slot[s]);
            s = self.parent[s];
        }
        from_r.extend(from_s.into_iter().rev());
        from_r
    }

    /// Pushes flow around the cycle closed by `(ei, ej)` and swaps it into the basis.
    /// Returns the amount pushed.
    fn pivot(&mut self, ei: usize, ej: usize) -> T {
        let path = self.path(ei, ej);
        // cells at even positions lose flow
        let mut theta = T::infinity();
        let mut leave = NONE;
        for &s in path.iter().step_by(2) {
            let f = self.flow[s];
            let key = |slot: usize| self.cells[slot].0 * self.p + self.cells[slot].1;
            if f < theta || (f == theta && key(s) < key(leave)) {
                theta = f;
                leave = s;
            }
        }
        for (t, &s) in path.iter().enumerate() {
            if t % 2 == 0 {
                self.flow[s] -= theta;
            } else {
                self.flow[s] += theta;
            }
        }
        let (li, lj) = self.cells[leave];
        self.slot_of[li * self.p + lj] = NONE;
        self.adj[li].retain(|&x| x != leave);
        self.adj[self.n + lj].retain(|&x| x != leave);
        self.cells[leave] = (ei, ej);
        self.flow[leave] = theta;
        self.slot_of[ei * self.p + ej] = leave;
        self.adj[ei].push(leave);
        self.adj[self.n + ej].push(leave);
        theta
    }
}
