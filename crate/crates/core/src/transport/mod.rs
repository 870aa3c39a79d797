//! Discrete optimal transport between atomic measures: the exact transportation LP, the
//! 1-D northwest corner rule, entropic (Sinkhorn) approximation, barycentric projection and
//! 2-Wasserstein distances.

mod network_simplex;
mod northwest;
mod sinkhorn;

use ndarray::{Array2, ArrayView1};

use crate::measures::{squared_distance, AtomicMeasure, Coupling, PointCloud};
use crate::{Error, Result, Scalar};

pub use network_simplex::{solve_kantorovich, solve_kantorovich_with, Pricing, SimplexOptions};
pub use northwest::{monotone_coupling_1d, northwest_corner_1d};
pub use sinkhorn::{sinkhorn, sinkhorn_with, SinkhornOptions};

/// Largest `n·p` the exact solver accepts.
pub const EXACT_SIZE_LIMIT: usize = 1 << 22;

/// A coupling with its cost `Σ_ij Γ_ij C_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlanResult<T> {
    pub coupling: Coupling<T>,
    pub objective: T,
    /// Exact LP optimum (network simplex or northwest corner) rather than an entropic plan.
    pub exact: bool,
    /// Always true for exact plans; for Sinkhorn, whether the marginal tolerance was met.
    pub converged: bool,
    /// Pivots (network simplex) or scaling sweeps (Sinkhorn); zero for the northwest corner rule.
    pub iterations: usize,
}

/// `C_ij = ‖x_i − y_j‖²`.
pub fn squared_euclidean_cost<T: Scalar>(x: &PointCloud<T>, y: &PointCloud<T>) -> Result<Array2<T>> {
    check_same_d(x, y)?;
    Ok(Array2::from_shape_fn((x.n(), y.n()), |(i, j)| squared_distance(x.row(i), y.row(j))))
}

/// `C_ij = ½‖x_i − y_j‖²`.
pub fn half_squared_cost<T: Scalar>(x: &PointCloud<T>, y: &PointCloud<T>) -> Result<Array2<T>> {
    Ok(squared_euclidean_cost(x, y)? * T::lit(0.5))
}

fn check_same_d<T: Scalar>(x: &PointCloud<T>, y: &PointCloud<T>) -> Result<()> {
    if x.d() != y.d() {
        return Err(Error::DimensionMismatch(format!("d = {} vs d = {}", x.d(), y.d())));
    }
    Ok(())
}

/// Checks nonnegativity, finiteness, unit total mass and that both sides carry the same mass.
pub(crate) fn check_marginals<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Result<()> {
    for (name, v) in [("row", a), ("column", b)] {
        if v.is_empty() {
            return Err(Error::InvalidMeasure(format!("{name} marginal is empty")));
        }
        if let Some((k, x)) = v.iter().enumerate().find(|(_, x)| !(**x >= T::zero()) || !x.is_finite()) {
            return Err(Error::InvalidMeasure(format!("{name} marginal entry {k} = {x}")));
        }
    }
    let (sa, sb): (T, T) = (a.sum(), b.sum());
    let slack = T::lit(1e-10).max(T::epsilon() * T::from_usize_lossy(a.len() + b.len()));
    if (sa - sb).abs() > slack {
        return Err(Error::InfeasibleMarginals {
            row: sa.as_f64(),
            col: sb.as_f64(),
        });
    }
    if (sa - T::one()).abs() > T::lit(1e-8).max(slack) {
        return Err(Error::InvalidMeasure(format!("marginals sum to {sa}, expected 1")));
    }
    Ok(())
}

fn check_cost<T: Scalar>(cost: &ndarray::ArrayView2<'_, T>, n: usize, p: usize) -> Result<()> {
    if cost.dim() != (n, p) {
        return Err(Error::ShapeMismatch(format!(
            "cost is {}x{} but marginals have lengths {n} and {p}",
            cost.nrows(),
            cost.ncols()
        )));
    }
    if let Some(((i, j), _)) = cost.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("cost entry ({i}, {j})")));
    }
    Ok(())
}

/// Row `i` of the output is the conditional mean `Σ_j Γ_ij θ_j / Σ_j Γ_ij`.
pub fn barycentric_projection<T: Scalar>(plan: &TransportPlanResult<T>, atoms: &PointCloud<T>) -> Result<PointCloud<T>> {
    let mass = plan.coupling.mass();
    let (n, p) = mass.dim();
    if atoms.n() != p {
        return Err(Error::ShapeMismatch(format!("plan has {p} columns but {} atoms", atoms.n())));
    }
    let d = atoms.d();
    let mut out = vec![T::zero(); n * d];
    for (i, row) in mass.outer_iter().enumerate() {
        let r: T = row.sum();
        if !(r > T::zero()) {
            return Err(Error::ZeroRowMass(i));
        }
        let dst = &mut out[i * d..(i + 1) * d];
        for (j, &g) in row.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            // dividing first keeps single-atom rows exact
            let w = g / r;
            for (o, &t) in dst.iter_mut().zip(atoms.row(j)) {
                *o += w * t;
            }
        }
    }
    PointCloud::from_flat(n, d, out)
}

/// Both sides of the barycentric contraction inequality for cost `½‖·‖²`:
/// `Σ_i r_i ½‖x_i − x̃_i‖² ≤ Σ_ij Γ_ij ½‖x_i − θ_j‖²` with `r_i` the row masses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionCheck<T> {
    pub barycentric_cost: T,
    pub plan_cost: T,
    /// The inequality with an allowance of `64 ε (1 + plan_cost)` for summation rounding,
    /// which matters only when every row is a single atom and both sides coincide.
    pub holds: bool,
}

pub fn barycentric_contraction<T: Scalar>(
    plan: &TransportPlanResult<T>,
    x: &PointCloud<T>,
    atoms: &PointCloud<T>,
    projected: &PointCloud<T>,
) -> Result<ContractionCheck<T>> {
    let mass = plan.coupling.mass();
    let (n, p) = mass.dim();
    if x.n() != n || projected.n() != n || atoms.n() != p {
        return Err(Error::ShapeMismatch(format!(
            "plan is {n}x{p}, got {} design rows, {} projected rows, {} atoms",
            x.n(),
            projected.n(),
            atoms.n()
        )));
    }
    check_same_d(x, atoms)?;
    check_same_d(x, projected)?;
    let half = T::lit(0.5);
    let mut bary = T::zero();
    let mut full = T::zero();
    for (i, row) in mass.outer_iter().enumerate() {
        let r: T = row.sum();
        bary += r * half * squared_distance(x.row(i), projected.row(i));
        for (j, &g) in row.iter().enumerate() {
            if g > T::zero() {
                full += g * half * squared_distance(x.row(i), atoms.row(j));
            }
        }
    }
    let allowance = T::lit(64.0) * T::epsilon() * (T::one() + full);
    Ok(ContractionCheck {
        barycentric_cost: bary,
        plan_cost: full,
        holds: bary <= full + allowance,
    })
}

/// Optimal value of the transportation LP with cost `‖x − y‖²`.
pub fn wasserstein2_squared<T: Scalar>(mu: &AtomicMeasure<T>, nu: &AtomicMeasure<T>) -> Result<T> {
    let cost = squared_euclidean_cost(mu.atoms(), nu.atoms())?;
    let plan = solve_kantorovich(cost.view(), mu.weights(), nu.weights())?;
    Ok(plan.objective.max(T::zero()))
}

/// `𝖶₂(μ, ν)`.
pub fn wasserstein2<T: Scalar>(mu: &AtomicMeasure<T>, nu: &AtomicMeasure<T>) -> Result<T> {
    Ok(wasserstein2_squared(mu, nu)?.sqrt())
}
