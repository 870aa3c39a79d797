//! Grid Kiefer–Wolfowitz NPMLE: maximize `Σ_i log Σ_j α_j φ_σ(Y_i − θ_j)` over the probability
//! simplex for a finite grid of candidate atoms `θ_j`.
//!
//! With `L_ij = φ_σ(Y_i − θ_j)` and `f = Lα`, the optimality certificate is the gradient ratio
//! `D_j = (1/n) Σ_i L_ij / f_i`. Every feasible `α` has `Σ_j α_j D_j = 1`, and `α` is optimal
//! iff `max_j D_j ≤ 1`, with equality on the support.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::linalg::{cholesky_apply, cholesky_factor, dot};
use crate::measures::{AtomicMeasure, NoiseModel, PointCloud};
use crate::{Error, Result, Scalar};

/// Weights above this count as active when checking `D_j ≥ 1 − 10·tol`.
pub const ACTIVE_WEIGHT: f64 = 1e-7;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 50_000;
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 1e-8;

/// Candidate atoms for the mixing measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPolicy {
    /// The observations themselves, with duplicates merged.
    DataPoints,
    /// `count` equally spaced points spanning `[min Y, max Y]` (`d = 1` only).
    Linspace1D(usize),
}

impl GridPolicy {
    /// `2⌈√n⌉` equally spaced points for `d = 1`, the observations otherwise.
    pub fn default_for(n: usize, d: usize) -> Self {
        if d == 1 {
            Self::Linspace1D((2 * (n as f64).sqrt().ceil() as usize).max(2))
        } else {
            Self::DataPoints
        }
    }
}

pub fn build_grid<T: Scalar>(y: &PointCloud<T>, policy: GridPolicy) -> Result<PointCloud<T>> {
    match policy {
        GridPolicy::DataPoints => Ok(y.dedup().0),
        GridPolicy::Linspace1D(count) => {
            if y.d() != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "a linearly spaced grid needs d = 1, got d = {}",
                    y.d()
                )));
            }
            if count < 2 {
                return Err(Error::InvalidParameter(format!("grid size must be >= 2, got {count}")));
            }
            let (lo, hi) = y.bounds();
            let (lo, hi) = (lo[0], hi[0]);
            let step = (hi - lo) / T::from_usize_lossy(count - 1);
            let mut pts: Vec<T> = (0..count).map(|k| lo + step * T::from_usize_lossy(k)).collect();
            pts[count - 1] = hi;
            // a constant sample gives coincident points
            Ok(PointCloud::from_scalars(&pts)?.dedup().0)
        }
    }
}

/// `L_ij = φ(Y_i − θ_j)`, floored at [`Scalar::underflow_floor`]. Rows are filled in parallel.
pub fn likelihood_matrix<T: Scalar>(y: &PointCloud<T>, grid: &PointCloud<T>, model: &NoiseModel<T>) -> Result<Array2<T>> {
    if y.d() != grid.d() {
        return Err(Error::DimensionMismatch(format!(
            "observations have d = {} but grid has d = {}",
            y.d(),
            grid.d()
        )));
    }
    model.check(y.d())?;
    let (n, p, d) = (y.n(), grid.n(), y.d());
    let floor = T::underflow_floor();
    let mut out = vec![T::zero(); n * p];
    out.par_chunks_mut(p).enumerate().for_each(|(i, row)| {
        let yi = y.row(i);
        let mut z = vec![T::zero(); d];
        for (j, cell) in row.iter_mut().enumerate() {
            for ((zk, &a), &b) in z.iter_mut().zip(yi).zip(grid.row(j)) {
                *zk = a - b;
            }
            *cell = model.density_unchecked(&z).max(floor);
        }
    });
    Ok(Array2::from_shape_vec((n, p), out).expect("n*p cells"))
}

/// Algorithm used by [`solve_npmle_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NpmleMethod {
    /// Constrained Newton steps on a growing support, each a quadratic model of the
    /// log-likelihood minimized over the simplex, with a backtracking line search.
    #[default]
    ConstrainedNewton,
    /// Multiplicative fixed point `α_j ← α_j D_j`.
    Em,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpmleOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    pub method: NpmleMethod,
}

impl<T: Scalar> Default for NpmleOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(DEFAULT_TOL),
            max_iter: DEFAULT_MAX_ITER,
            method: NpmleMethod::default(),
        }
    }
}

/// Mixing weights over the columns of a likelihood matrix, with the optimality certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct NpmleFit<T> {
    pub weights: Array1<T>,
    /// `Σ_i log (Lα)_i`.
    pub loglik: T,
    /// `max_j D_j`.
    pub dual_max: T,
    /// `min_j D_j` over weights above [`ACTIVE_WEIGHT`].
    pub dual_min_active: T,
    pub iterations: usize,
    /// Both certificate conditions met within `tol`.
    pub converged: bool,
    /// Negative log-likelihood after each iteration, starting with the initial point.
    pub objective_trace: Vec<T>,
}

/// An [`NpmleFit`] together with the grid its weights refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct NpmleSolution<T> {
    pub grid: PointCloud<T>,
    pub fit: NpmleFit<T>,
}

impl<T: Scalar> NpmleSolution<T> {
    pub fn weights(&self) -> &Array1<T> {
        &self.fit.weights
    }
}

/// `D_j = (1/n) Σ_i L_ij / (Lα)_i`.
pub fn dual_gradient<T: Scalar>(l: ArrayView2<'_, T>, weights: &[T]) -> Array1<T> {
    let f = l.dot(&ndarray::ArrayView1::from(weights));
    ratio_means(l, f.as_slice().expect("contiguous"))
}

fn ratio_means<T: Scalar>(l: ArrayView2<'_, T>, f: &[T]) -> Array1<T> {
    let (n, p) = l.dim();
    let mut acc = Array1::zeros(p);
    for (row, &fi) in l.outer_iter().zip(f) {
        let inv = T::one() / fi;
        acc.zip_mut_with(&row, |a, &v| *a += v * inv);
    }
    acc / T::from_usize_lossy(n)
}

/// `Σ_i log (Lα)_i`.
pub fn loglik<T: Scalar>(l: ArrayView2<'_, T>, weights: &[T]) -> T {
    l.dot(&ndarray::ArrayView1::from(weights)).iter().map(|v| v.ln()).sum()
}

/// Solves the grid NPMLE with the default method.
pub fn solve_npmle<T: Scalar>(l: ArrayView2<'_, T>, tol: T, max_iter: usize) -> Result<NpmleFit<T>> {
    solve_npmle_with(
        l,
        &NpmleOptions {
            tol,
            max_iter,
            method: NpmleMethod::default(),
        },
    )
}

/// Runs until `max_j D_j − 1 ≤ tol` and `D_j ≥ 1 − 10·tol` on every weight above
/// [`ACTIVE_WEIGHT`], or until `max_iter` iterations; in the latter case the returned fit has
/// `converged = false` and still carries its certificate values.
pub fn solve_npmle_with<T: Scalar>(l: ArrayView2<'_, T>, opts: &NpmleOptions<T>) -> Result<NpmleFit<T>> {
    let (n, p) = l.dim();
    if n == 0 || p == 0 {
        return Err(Error::ShapeMismatch(format!("likelihood matrix is {n}x{p}")));
    }
    if let Some(((i, j), v)) = l.indexed_iter().find(|(_, v)| !(v.is_finite() && **v > T::zero())) {
        return Err(Error::InvalidParameter(format!(
            "likelihood entry ({i}, {j}) = {v} is not strictly positive"
        )));
    }
    if !(opts.tol > T::zero() && opts.tol.is_finite()) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {}", opts.tol)));
    }
    let mut state = match opts.method {
        NpmleMethod::ConstrainedNewton => {
            let support = covering_support(l);
            let mut w = vec![T::zero(); p];
            let share = T::one() / T::from_usize_lossy(support.len());
            support.iter().for_each(|&j| w[j] = share);
            State::new(l, w, support)
        }
        NpmleMethod::Em => {
            let w = vec![T::one() / T::from_usize_lossy(p); p];
            State::new(l, w, (0..p).collect())
        }
    };
    let mut trace = vec![-state.ll];
    let mut iterations = 0;
    loop {
        let dual = ratio_means(l, &state.f);
        if certificate_ok(&dual, &state.w, opts.tol) || iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let progressed = match opts.method {
            NpmleMethod::Em => {
                state.em_step(&dual);
                true
            }
            NpmleMethod::ConstrainedNewton => state.newton_step(&dual) || state.vertex_step(&dual),
        };
        trace.push(-state.ll);
        if !progressed {
            break;
        }
    }
    let total: T = state.w.iter().copied().sum();
    let weights = Array1::from(state.w.iter().map(|&v| v / total).collect::<Vec<_>>());
    let w = weights.as_slice().expect("contiguous");
    let dual = dual_gradient(l, w);
    let (dual_max, dual_min_active) = dual_extremes(&dual, w);
    Ok(NpmleFit {
        loglik: loglik(l, w),
        converged: certificate_ok(&dual, w, opts.tol),
        weights,
        dual_max,
        dual_min_active,
        iterations,
        objective_trace: trace,
    })
}

fn dual_extremes<T: Scalar>(dual: &Array1<T>, w: &[T]) -> (T, T) {
    let active = T::lit(ACTIVE_WEIGHT);
    let mut max = T::neg_infinity();
    let mut min_active = T::infinity();
    for (&dj, &wj) in dual.iter().zip(w) {
        max = max.max(dj);
        if wj > active {
            min_active = min_active.min(dj);
        }
    }
    (max, min_active)
}

fn certificate_ok<T: Scalar>(dual: &Array1<T>, w: &[T], tol: T) -> bool {
    let (max, min_active) = dual_extremes(dual, w);
    max - T::one() <= tol && min_active >= T::one() - T::lit(10.0) * tol
}

fn best_single_atom<T: Scalar>(l: ArrayView2<'_, T>) -> usize {
    let mut best = (0, T::neg_infinity());
    for (j, col) in l.columns().into_iter().enumerate() {
        let s: T = col.iter().map(|v| v.ln()).sum();
        if s > best.1 {
            best = (j, s);
        }
    }
    best.0
}

/// Likelihood ratio below which a row counts as uncovered by the starting support.
const COVER_RATIO: f64 = 2.061_153_622_438_558e-9; // e^-20

/// Starting support for the Newton iterations: the best single atom, then, while some row's
/// best likelihood within the support is below `COVER_RATIO` times its best over the whole
/// grid, the best column of the worst such row. Rows that no atom explains would otherwise
/// make the local quadratic model useless for many iterations.
fn covering_support<T: Scalar>(l: ArrayView2<'_, T>) -> Vec<usize> {
    let (n, p) = l.dim();
    let mut best_col = vec![0usize; n];
    let mut best_val = vec![T::zero(); n];
    for (i, row) in l.outer_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > best_val[i] {
                best_val[i] = v;
                best_col[i] = j;
            }
        }
    }
    let j0 = best_single_atom(l);
    let mut support = vec![j0];
    let mut in_support = vec![false; p];
    in_support[j0] = true;
    let mut cover: Vec<T> = l.column(j0).to_vec();
    let threshold = T::lit(COVER_RATIO);
    loop {
        let mut worst: Option<(usize, T)> = None;
        for i in 0..n {
            let r = cover[i] / best_val[i];
            if r < threshold && worst.is_none_or(|(_, wr)| r < wr) {
                worst = Some((i, r));
            }
        }
        let Some((i, _)) = worst else { break };
        let j = best_col[i];
        if in_support[j] {
            break;
        }
        in_support[j] = true;
        support.push(j);
        for (c, &v) in cover.iter_mut().zip(l.column(j)) {
            *c = c.max(v);
        }
    }
    support.sort_unstable();
    support
}

struct State<'a, T> {
    l: ArrayView2<'a, T>,
    w: Vec<T>,
    support: Vec<usize>,
    f: Vec<T>,
    ll: T,
}

const ARMIJO: f64 = 1.0 / 3.0;
const MAX_HALVINGS: usize = 60;
const MIN_ATOMS_ADDED: usize = 5;

impl<'a, T: Scalar> State<'a, T> {
    fn new(l: ArrayView2<'a, T>, w: Vec<T>, support: Vec<usize>) -> Self {
        let mut s = Self {
            l,
            w,
            support,
            f: Vec::new(),
            ll: T::zero(),
        };
        s.refresh();
        s
    }

    fn mixture(&self, w: &[T], support: &[usize]) -> Vec<T> {
        let mut f = vec![T::zero(); self.l.nrows()];
        for &j in support {
            if w[j] == T::zero() {
                continue;
            }
            for (fi, &v) in f.iter_mut().zip(self.l.column(j)) {
                *fi += w[j] * v;
            }
        }
        f.iter_mut().for_each(|v| *v = v.max(T::underflow_floor()));
        f
    }

    fn refresh(&mut self) {
        self.support.retain(|&j| self.w[j] > T::zero());
        self.f = self.mixture(&self.w, &self.support);
        self.ll = self.f.iter().map(|v| v.ln()).sum();
    }

    fn em_step(&mut self, dual: &Array1<T>) {
        for (wj, &dj) in self.w.iter_mut().zip(dual) {
            *wj *= dj;
        }
        let total: T = self.w.iter().copied().sum();
        self.w.iter_mut().for_each(|v| *v /= total);
        self.refresh();
    }

    /// Backtracking search along `w + t (target − w)` from `t = 1`. `slope` is the directional
    /// derivative of the log-likelihood at `t = 0`. Accepts the first `t` with sufficient
    /// increase; a full step that loses no more than rounding is also accepted so the
    /// final Newton iterations, whose gains fall below `ε·|ll|`, are not rejected.
    fn line_search(&mut self, target: &[T], support: &[usize], slope: T) -> bool {
        if !(slope > T::zero()) {
            return false;
        }
        let roundoff = T::lit(8.0) * T::epsilon() * self.f.iter().map(|v| v.ln().abs()).sum();
        let mut t = T::one();
        let mut trial = self.w.clone();
        for _ in 0..MAX_HALVINGS {
            for &j in support {
                trial[j] = self.w[j] + t * (target[j] - self.w[j]);
                if trial[j] < T::zero() {
                    trial[j] = T::zero();
                }
            }
            let f = self.mixture(&trial, support);
            let ll: T = f.iter().map(|v| v.ln()).sum();
            let sufficient = ll >= self.ll + T::lit(ARMIJO) * t * slope;
            let full_step_flat = t == T::one() && ll >= self.ll - roundoff;
            if sufficient || full_step_flat {
                self.w = trial;
                let mut sup = support.to_vec();
                sup.sort_unstable();
                self.support = sup;
                self.refresh();
                return true;
            }
            t *= T::lit(0.5);
        }
        false
    }

    fn newton_step(&mut self, dual: &Array1<T>) -> bool {
        let n = self.l.nrows();
        let nt = T::from_usize_lossy(n);
        let mut cand: Vec<usize> = (0..dual.len())
            .filter(|&j| dual[j] > T::one() && self.w[j] == T::zero())
            .collect();
        cand.sort_by(|&a, &b| dual[b].partial_cmp(&dual[a]).unwrap().then(a.cmp(&b)));
        cand.truncate(MIN_ATOMS_ADDED.max(self.support.len() / 4));
        let mut cols = self.support.clone();
        cols.extend(cand);
        let k = cols.len();

        // scaled design S_ij = L_ij / f_i; since S w = 1, the second order model of the
        // log-likelihood at w is −½‖S β − 2·1‖² up to a constant, over the simplex
        let clip = T::max_value().powf(T::lit(0.25));
        let inv: Vec<T> = self.f.iter().map(|&v| T::one() / v).collect();
        // transposed: one contiguous row of length n per candidate column
        let mut st = vec![T::zero(); k * n];
        st.par_chunks_mut(n).zip(cols.par_iter()).for_each(|(row, &j)| {
            for ((dst, &lij), &vi) in row.iter_mut().zip(self.l.column(j)).zip(&inv) {
                *dst = (lij * vi).min(clip);
            }
        });
        let rhs: Vec<T> = st.par_chunks(n).map(|r| T::lit(2.0) * r.iter().copied().sum::<T>()).collect();
        let mut gram = vec![T::zero(); k * k];
        gram.par_chunks_mut(k).enumerate().for_each(|(a, out)| {
            let ra = &st[a * n..(a + 1) * n];
            for (b, o) in out.iter_mut().enumerate().take(a + 1) {
                *o = dot(ra, &st[b * n..(b + 1) * n]);
            }
        });
        for a in 0..k {
            for b in 0..a {
                gram[b * k + a] = gram[a * k + b];
            }
        }
        let x0: Vec<T> = cols.iter().map(|&j| self.w[j]).collect();
        let beta = simplex_qp(&gram, &rhs, &x0, k);
        if beta.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let mut target = vec![T::zero(); self.w.len()];
        for (c, &j) in cols.iter().enumerate() {
            target[j] = beta[c];
        }
        let slope = nt * (cols.iter().map(|&j| dual[j] * target[j]).sum::<T>() - T::one());
        self.line_search(&target, &cols, slope)
    }

    /// Moves mass toward the atom with the largest `D_j`; an ascent direction whenever
    /// `max_j D_j > 1`.
    fn vertex_step(&mut self, dual: &Array1<T>) -> bool {
        let (jmax, dmax) = dual
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
        if !(dmax > T::one()) {
            return false;
        }
        let mut target = vec![T::zero(); self.w.len()];
        target[jmax] = T::one();
        let mut cols = self.support.clone();
        if !cols.contains(&jmax) {
            cols.push(jmax);
        }
        let slope = T::from_usize_lossy(self.l.nrows()) * (dmax - T::one());
        self.line_search(&target, &cols, slope)
    }
}

/// Primal active set method for `min ½βᵀGβ − cᵀβ` over the probability simplex, with `G`
/// symmetric positive semidefinite (`k×k`, row-major). Starts from the feasible point `x0`
/// whose positive coordinates form the initial working set.
fn simplex_qp<T: Scalar>(g: &[T], c: &[T], x0: &[T], k: usize) -> Vec<T> {
    let mut x = x0.to_vec();
    let mut passive: Vec<bool> = x.iter().map(|&v| v > T::zero()).collect();
    let mut banned = vec![false; k];
    let cmax = c.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let wtol = T::lit(1e-13).max(T::lit(16.0) * T::epsilon()) * cmax;
    for _ in 0..4 * k + 4 {
        let Some((z, nu)) = solve_passive(g, c, &passive, k) else {
            break;
        };
        if passive.iter().zip(&z).all(|(&p, &v)| !p || v > T::zero()) {
            x = z;
            let mut best: Option<(usize, T)> = None;
            for t in 0..k {
                if passive[t] || banned[t] {
                    continue;
                }
                let w = c[t] - nu - (0..k).fold(T::zero(), |acc, s| acc + g[t * k + s] * x[s]);
                if w > wtol && best.is_none_or(|(_, bw)| w > bw) {
                    best = Some((t, w));
                }
            }
            match best {
                Some((t, _)) => passive[t] = true,
                None => break,
            }
            continue;
        }
        // move toward z until the first passive coordinate reaches zero
        let ratio = |s: usize| {
            let denom = x[s] - z[s];
            if denom > T::zero() { x[s] / denom } else { T::zero() }
        };
        let step = (0..k)
            .filter(|&s| passive[s] && z[s] <= T::zero())
            .map(ratio)
            .fold(T::one(), |m, r| m.min(r));
        let blocking: Vec<usize> = (0..k)
            .filter(|&s| passive[s] && z[s] <= T::zero() && ratio(s) <= step)
            .collect();
        for s in 0..k {
            if passive[s] {
                let xs = x[s];
                x[s] = xs + step * (z[s] - xs);
            }
        }
        for s in blocking {
            if x0[s] == T::zero() && step == T::zero() {
                banned[s] = true;
            }
            x[s] = T::zero();
            passive[s] = false;
        }
        let total: T = x.iter().copied().sum();
        x.iter_mut().for_each(|v| *v /= total);
    }
    x
}

/// Equality constrained minimizer over the passive coordinates: `G_PP z = c_P − ν 1` with
/// `1ᵀz = 1`. A ridge proportional to the diagonal is added if `G_PP` is numerically singular.
fn solve_passive<T: Scalar>(g: &[T], c: &[T], passive: &[bool], k: usize) -> Option<(Vec<T>, T)> {
    let idx: Vec<usize> = (0..k).filter(|&s| passive[s]).collect();
    let m = idx.len();
    if m == 0 {
        return None;
    }
    let mut ridge = T::zero();
    let diag_max = idx.iter().fold(T::zero(), |acc, &s| acc.max(g[s * k + s]));
    for _ in 0..6 {
        let mut a = vec![T::zero(); m * m];
        for (r, &s) in idx.iter().enumerate() {
            for (q, &u) in idx.iter().enumerate() {
                a[r * m + q] = g[s * k + u];
            }
            a[r * m + r] += ridge;
        }
        let mut y1: Vec<T> = idx.iter().map(|&s| c[s]).collect();
        let mut y2 = vec![T::one(); m];
        if cholesky_factor(&mut a, m) {
            cholesky_apply(&a, &mut y1, m);
            cholesky_apply(&a, &mut y2, m);
            let s1: T = y1.iter().copied().sum();
            let s2: T = y2.iter().copied().sum();
            if s2 > T::zero() && s2.is_finite() {
                let nu = (s1 - T::one()) / s2;
                let mut z = vec![T::zero(); k];
                for (r, &s) in idx.iter().enumerate() {
                    z[s] = y1[r] - nu * y2[r];
                }
                return Some((z, nu));
            }
        }
        ridge = if ridge == T::zero() {
            diag_max * T::lit(1e-13).max(T::epsilon() * T::lit(16.0))
        } else {
            ridge * T::lit(100.0)
        };
    }
    None
}

/// Drops atoms with weight `≤ threshold` and renormalizes the rest.
pub fn prune_to_measure<T: Scalar>(sol: &NpmleSolution<T>, threshold: T) -> Result<AtomicMeasure<T>> {
    if !(threshold >= T::zero() && threshold < T::one()) {
        return Err(Error::InvalidParameter(format!("pruning threshold must be in [0, 1), got {threshold}")));
    }
    if sol.grid.n() != sol.fit.weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "grid has {} atoms but {} weights",
            sol.grid.n(),
            sol.fit.weights.len()
        )));
    }
    let keep: Vec<usize> = (0..sol.grid.n()).filter(|&j| sol.fit.weights[j] > threshold).collect();
    if keep.is_empty() {
        return Err(Error::EmptyMeasure(threshold.as_f64()));
    }
    let total: T = keep.iter().map(|&j| sol.fit.weights[j]).sum();
    let weights = Array1::from(keep.iter().map(|&j| sol.fit.weights[j] / total).collect::<Vec<_>>());
    AtomicMeasure::new(sol.grid.select(&keep), weights)
}

/// Grid construction, likelihood assembly and solve in one call.
pub fn fit_npmle<T: Scalar>(
    y: &PointCloud<T>,
    model: &NoiseModel<T>,
    policy: GridPolicy,
    opts: &NpmleOptions<T>,
) -> Result<NpmleSolution<T>> {
    let grid = build_grid(y, policy)?;
    let l = likelihood_matrix(y, &grid, model)?;
    let fit = solve_npmle_with(l.view(), opts)?;
    Ok(NpmleSolution { grid, fit })
}
