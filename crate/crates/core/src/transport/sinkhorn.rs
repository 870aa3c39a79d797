use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{check_cost, check_marginals, TransportPlanResult};
use crate::measures::Coupling;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions<T> {
    pub epsilon: T,
    pub max_iter: usize,
    /// Target L1 residual of the row marginal (columns are exact after each sweep).
    pub tol: T,
}

impl<T: Scalar> Default for SinkhornOptions<T> {
    fn default() -> Self {
        Self {
            epsilon: T::lit(0.1),
            max_iter: 10_000,
            tol: T::lit(1e-6),
        }
    }
}

pub fn sinkhorn<T: Scalar>(
    cost: ArrayView2<'_, T>,
    a: ArrayView1<'_, T>,
    b: ArrayView1<'_, T>,
    epsilon: T,
    max_iter: usize,
    tol: T,
) -> Result<TransportPlanResult<T>> {
    sinkhorn_with(cost, a, b, &SinkhornOptions { epsilon, max_iter, tol })
}

/// Entropic transport plan `Γ_ij = exp(f_i + g_j − C_ij/ε)` from log-domain alternating
/// projections onto the two marginal constraints.
///
/// Sweeps first run on a geometric ladder of larger regularizations (halving from
/// `max C` down to `ε`, at most 50 sweeps per rung) to warm-start the potentials; only
/// sweeps at the target `ε` count against `max_iter`. Without convergence the iterate
/// with the smallest residual is returned with `converged = false`.
pub fn sinkhorn_with<T: Scalar>(
    cost: ArrayView2<'_, T>,
    a: ArrayView1<'_, T>,
    b: ArrayView1<'_, T>,
    opts: &SinkhornOptions<T>,
) -> Result<TransportPlanResult<T>> {
    let (n, p) = (a.len(), b.len());
    check_marginals(a, b)?;
    check_cost(&cost, n, p)?;
    for (name, v) in [("epsilon", opts.epsilon), ("tol", opts.tol)] {
        if !(v > T::zero() && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    // zero-mass rows and columns carry no plan entries
    let rows: Vec<usize> = (0..n).filter(|&i| a[i] > T::zero()).collect();
    let cols: Vec<usize> = (0..p).filter(|&j| b[j] > T::zero()).collect();
    let la: Vec<T> = rows.iter().map(|&i| a[i].ln()).collect();
    let lb: Vec<T> = cols.iter().map(|&j| b[j].ln()).collect();
    let ar: Vec<T> = rows.iter().map(|&i| a[i]).collect();
    let (nr, nc) = (rows.len(), cols.len());
    let c = Array2::from_shape_fn((nr, nc), |(r, s)| cost[[rows[r], cols[s]]]);
    let cmax = c.iter().fold(T::zero(), |m, v| m.max(v.abs()));

    let mut f = vec![T::zero(); nr];
    let mut g = vec![T::zero(); nc];
    let mut scaled = Array2::zeros((nr, nc));
    let mut buf = vec![T::zero(); nr.max(nc)];

    let mut eps = cmax.max(opts.epsilon);
    while eps > opts.epsilon {
        scaled.assign(&(&c / eps));
        for _ in 0..50 {
            sweep(&scaled, &la, &lb, &mut f, &mut g, &mut buf);
            if row_residual(&scaled, &f, &g, &ar) <= opts.tol {
                break;
            }
        }
        // potentials are stored divided by ε; rescale for the next rung
        let next = (eps * T::lit(0.5)).max(opts.epsilon);
        let ratio = eps / next;
        f.iter_mut().for_each(|v| *v *= ratio);
        g.iter_mut().for_each(|v| *v *= ratio);
        eps = next;
    }
    scaled.assign(&(&c / opts.epsilon));

    let mut best = (T::infinity(), f.clone(), g.clone());
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        sweep(&scaled, &la, &lb, &mut f, &mut g, &mut buf);
        iterations += 1;
        let res = row_residual(&scaled, &f, &g, &ar);
        if res < best.0 {
            best = (res, f.clone(), g.clone());
        }
        if res <= opts.tol {
            converged = true;
            break;
        }
    }
    let (residual, f, g) = best;

    let mut mass = Array2::zeros((n, p));
    for (r, &i) in rows.iter().enumerate() {
        for (s, &j) in cols.iter().enumerate() {
            mass[[i, j]] = (f[r] + g[s] - scaled[[r, s]]).exp();
        }
    }
    // columns are matched to rounding; rows to the reported residual
    let slack = residual.max(opts.tol) + T::lit(1e-12).max(T::lit(64.0) * T::epsilon());
    let coupling = Coupling::with_tolerance(mass, a.to_owned(), b.to_owned(), slack)?;
    let objective = coupling.cost(cost);
    Ok(TransportPlanResult {
        coupling,
        objective,
        exact: false,
        converged,
        iterations,
    })
}

fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let m = v.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    if m == T::neg_infinity() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// One row update followed by one column update, in units of `ε`.
fn sweep<T: Scalar>(scaled: &Array2<T>, la: &[T], lb: &[T], f: &mut [T], g: &mut [T], buf: &mut [T]) {
    let (nr, nc) = scaled.dim();
    for r in 0..nr {
        for s in 0..nc {
            buf[s] = g[s] - scaled[[r, s]];
        }
        f[r] = la[r] - log_sum_exp(&buf[..nc]);
    }
    for s in 0..nc {
        for r in 0..nr {
            buf[r] = f[r] - scaled[[r, s]];
        }
        g[s] = lb[s] - log_sum_exp(&buf[..nr]);
    }
}

fn row_residual<T: Scalar>(scaled: &Array2<T>, f: &[T], g: &[T], a: &[T]) -> T {
    let mut total = T::zero();
    for (r, row) in scaled.outer_iter().enumerate() {
        let s: T = row.iter().zip(g).map(|(&c, &gs)| (f[r] + gs - c).exp()).sum();
        total += (s - a[r]).abs();
    }
    total
}
