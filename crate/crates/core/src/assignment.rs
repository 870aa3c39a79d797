//! Square linear assignment, permutation recovery from shuffled responses, and the
//! cyclical-monotonicity diagnostics that characterize gradients of convex functions.

use std::fmt;

use ndarray::{Array2, ArrayView2};

use crate::measures::{dot, squared_distance, PointCloud};
use crate::{Error, Result, Scalar};

/// A bijection of `{0, …, n-1}`; `map[i]` is the image of `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for (i, &v) in map.iter().enumerate() {
            if v >= n {
                return Err(Error::InvalidPermutation(format!("entry {i} = {v} out of range 0..{n}")));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidPermutation(format!("value {v} repeated at entry {i}")));
            }
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.map
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Self { map: inv }
    }

    /// `self ∘ other`, i.e. `i ↦ self(other(i))`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot compose permutations of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self {
            map: other.map.iter().map(|&j| self.map[j]).collect(),
        })
    }
}

impl std::ops::Index<usize> for Permutation {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.map[i]
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.map)
    }
}

/// An assignment `i ↦ π(i)` with its total cost `Σ_i C[i, π(i)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult<T> {
    pub permutation: Permutation,
    pub objective: T,
}

fn check_square<T: Scalar>(cost: &ArrayView2<'_, T>) -> Result<usize> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::ShapeMismatch(format!("cost matrix must be square, got {n}x{m}")));
    }
    if n == 0 {
        return Err(Error::ShapeMismatch("cost matrix is empty".into()));
    }
    if let Some(((i, j), _)) = cost.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("cost entry ({i}, {j})")));
    }
    Ok(n)
}

/// `Σ_i C[i, π(i)]`, summed in row order.
pub fn assignment_cost<T: Scalar>(cost: ArrayView2<'_, T>, perm: &Permutation) -> T {
    perm.as_slice()
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &j)| acc + cost[[i, j]])
}

/// Exact minimum-cost perfect matching by shortest augmenting paths with dual potentials.
///
/// Rows are inserted in index order and columns scanned in index order with strict
/// comparisons, so the output is a deterministic function of the matrix.
pub fn solve_lap<T: Scalar>(cost: ArrayView2<'_, T>) -> Result<AssignmentResult<T>> {
    let n = check_square(&cost)?;
    let inf = T::infinity();
    // 1-based: column 0 is the virtual root of each augmenting tree
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut map = vec![0usize; n];
    for j in 1..=n {
        map[owner[j] - 1] = j - 1;
    }
    let permutation = Permutation { map };
    let objective = assignment_cost(cost, &permutation);
    Ok(AssignmentResult { permutation, objective })
}

/// Largest `n` accepted by [`brute_force_lap`].
pub const BRUTE_FORCE_MAX_N: usize = 9;

/// Exhaustive minimum over all `n!` permutations, enumerated in lexicographic order;
/// the lexicographically smallest minimizer wins ties.
pub fn brute_force_lap<T: Scalar>(cost: ArrayView2<'_, T>) -> Result<AssignmentResult<T>> {
    let n = check_square(&cost)?;
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::InvalidParameter(format!(
            "brute force assignment limited to n <= {BRUTE_FORCE_MAX_N}, got {n}"
        )));
    }
    let mut cur: Vec<usize> = (0..n).collect();
    let mut best = cur.clone();
    let mut best_cost = assignment_cost(cost, &Permutation { map: cur.clone() });
    while next_permutation(&mut cur) {
        let c = cur.iter().enumerate().fold(T::zero(), |acc, (i, &j)| acc + cost[[i, j]]);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&cur);
        }
    }
    Ok(AssignmentResult {
        permutation: Permutation { map: best },
        objective: best_cost,
    })
}

fn next_permutation(a: &mut [usize]) -> bool {
    if a.len() < 2 {
        return false;
    }
    let mut i = a.len() - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = a.len() - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// `C_ij = ½‖Y_i − X_j‖²`.
pub fn recovery_cost<T: Scalar>(x: &PointCloud<T>, y: &PointCloud<T>) -> Result<Array2<T>> {
    if x.n() != y.n() || x.d() != y.d() {
        return Err(Error::ShapeMismatch(format!(
            "X is {}x{} but Y is {}x{}",
            x.n(),
            x.d(),
            y.n(),
            y.d()
        )));
    }
    let half = T::lit(0.5);
    Ok(Array2::from_shape_fn((y.n(), x.n()), |(i, j)| {
        half * squared_distance(y.row(i), x.row(j))
    }))
}

/// Estimates the shuffling permutation: response `Y_i` is matched to design `X_{π̂(i)}`.
pub fn recover_permutation<T: Scalar>(x: &PointCloud<T>, y: &PointCloud<T>) -> Result<AssignmentResult<T>> {
    solve_lap(recovery_cost(x, y)?.view())
}

/// Fraction of indices on which `a` and `b` disagree.
pub fn scaled_hamming(a: &Permutation, b: &Permutation) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "permutations of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let diff = a.map.iter().zip(&b.map).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.len() as f64)
}

/// Minimum pairwise gap of a design against the noise level needed for exact recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationCertificate<T> {
    pub min_gap: T,
    /// `σ √(6 log n) / λ`.
    pub threshold: T,
    /// `min_gap > threshold`, compared exactly.
    pub satisfied: bool,
}

pub fn separation_certificate<T: Scalar>(x: &PointCloud<T>, lambda: T, sigma: T) -> Result<SeparationCertificate<T>> {
    let n = x.n();
    if n < 2 {
        return Err(Error::InvalidParameter("separation needs at least two points".into()));
    }
    for (name, v) in [("lambda", lambda), ("sigma", sigma)] {
        if !(v > T::zero() && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let mut min_sq = T::infinity();
    for i in 0..n {
        for j in i + 1..n {
            min_sq = min_sq.min(squared_distance(x.row(i), x.row(j)));
        }
    }
    let min_gap = min_sq.sqrt();
    let threshold = sigma * (T::lit(6.0) * T::from_usize_lossy(n).ln()).sqrt() / lambda;
    Ok(SeparationCertificate {
        min_gap,
        threshold,
        satisfied: min_gap > threshold,
    })
}

/// Longest cycle the exhaustive monotonicity search accepts.
pub const MAX_CYCLE_LEN: usize = 6;

/// Outcome of an exhaustive search over index cycles `i_1 → … → i_k → i_1`.
///
/// The slack of a cycle is `Σ_t ⟨x_{i_t}, y_{i_t}⟩ − Σ_t ⟨x_{i_{t+1}}, y_{i_t}⟩`; a set of
/// pairs is cyclically monotone iff every slack is nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport<T> {
    pub cycles_checked: usize,
    /// Smallest slack found and the cycle attaining it (empty when `n < 2`).
    pub worst_slack: T,
    pub worst_cycle: Vec<usize>,
    /// Rounding allowance of the worst cycle: a small multiple of `Σ|⟨·,·⟩|` over its terms.
    pub worst_tolerance: T,
    /// First cycle, in enumeration order, whose slack is below minus its tolerance.
    pub first_violation: Option<Vec<usize>>,
}

impl<T: Scalar> CycleReport<T> {
    /// No cycle has negative slack beyond rounding.
    pub fn is_monotone(&self) -> bool {
        self.first_violation.is_none()
    }

    /// Every cycle has slack strictly above its rounding allowance.
    pub fn is_strictly_monotone(&self) -> bool {
        self.worst_cycle.is_empty() || self.worst_slack > self.worst_tolerance
    }
}

fn rounding_scale<T: Scalar>() -> T {
    T::lit(1e-12).max(T::lit(64.0) * T::epsilon())
}

/// Enumerates every cycle of distinct indices of length `2..=max_cycle_len` whose smallest
/// element comes first, in lexicographic order, and reports slacks.
pub fn cycle_report<T: Scalar>(x: &PointCloud<T>, y: &PointCloud<T>, max_cycle_len: usize) -> Result<CycleReport<T>> {
    if x.n() != y.n() || x.d() != y.d() {
        return Err(Error::ShapeMismatch(format!(
            "pairs need matching shapes, got {}x{} and {}x{}",
            x.n(),
            x.d(),
            y.n(),
            y.d()
        )));
    }
    if !(2..=MAX_CYCLE_LEN).contains(&max_cycle_len) {
        return Err(Error::InvalidParameter(format!(
            "cycle length must be in 2..={MAX_CYCLE_LEN}, got {max_cycle_len}"
        )));
    }
    let n = x.n();
    let g = Array2::from_shape_fn((n, n), |(a, b)| dot(x.row(a), y.row(b)));
    let mut search = CycleSearch {
        g: g.view(),
        max_len: max_cycle_len,
        path: Vec::with_capacity(max_cycle_len),
        on_path: vec![false; n],
        report: CycleReport {
            cycles_checked: 0,
            worst_slack: T::infinity(),
            worst_cycle: Vec::new(),
            worst_tolerance: T::zero(),
            first_violation: None,
        },
        scale: rounding_scale(),
    };
    for start in 0..n {
        search.path.push(start);
        search.on_path[start] = true;
        search.extend(start);
        search.on_path[start] = false;
        search.path.pop();
    }
    let mut report = search.report;
    if report.worst_cycle.is_empty() {
        report.worst_slack = T::zero();
    }
    Ok(report)
}

struct CycleSearch<'a, T> {
    g: ArrayView2<'a, T>,
    max_len: usize,
    path: Vec<usize>,
    on_path: Vec<bool>,
    report: CycleReport<T>,
    scale: T,
}

impl<T: Scalar> CycleSearch<'_, T> {
    fn extend(&mut self, start: usize) {
        let n = self.on_path.len();
        for next in start + 1..n {
            if self.on_path[next] {
                continue;
            }
            self.path.push(next);
            self.on_path[next] = true;
            self.close();
            if self.path.len() < self.max_len {
                self.extend(start);
            }
            self.on_path[next] = false;
            self.path.pop();
        }
    }

    fn close(&mut self) {
        let k = self.path.len();
        let (mut own, mut shifted, mut mag) = (T::zero(), T::zero(), T::zero());
        for t in 0..k {
            let (a, b) = (self.path[t], self.path[(t + 1) % k]);
            // g[x_index, y_index]
            own += self.g[[a, a]];
            shifted += self.g[[b, a]];
            mag += self.g[[a, a]].abs() + self.g[[b, a]].abs();
        }
        let slack = own - shifted;
        let tol = self.scale * mag;
        let r = &mut self.report;
        r.cycles_checked += 1;
        if slack < r.worst_slack {
            r.worst_slack = slack;
            r.worst_cycle = self.path.clone();
            r.worst_tolerance = tol;
        }
        if r.first_violation.is_none() && slack < -tol {
            r.first_violation = Some(self.path.clone());
        }
    }
}

/// First cycle of length at most `max_cycle_len` on which re-pairing `x_{i_{t+1}}` with
/// `y_{i_t}` strictly increases the total inner product, if any.
pub fn cyclical_monotonicity_violation<T: Scalar>(
    x: &PointCloud<T>,
    y: &PointCloud<T>,
    max_cycle_len: usize,
) -> Result<Option<Vec<usize>>> {
    Ok(cycle_report(x, y, max_cycle_len)?.first_violation)
}
