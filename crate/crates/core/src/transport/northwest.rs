use ndarray::{Array2, ArrayView1};

use super::{check_marginals, TransportPlanResult};
use crate::measures::{marginal_tol, Coupling};
use crate::{Error, Result, Scalar};

/// Greedy corner fill of the monotone coupling between sorted supports on the line, with
/// cost `½(x_i − θ_j)²`. Optimal for any convex cost of `x − θ`.
pub fn northwest_corner_1d<T: Scalar>(
    x_sorted: &[T],
    a: ArrayView1<'_, T>,
    theta_sorted: &[T],
    b: ArrayView1<'_, T>,
) -> Result<TransportPlanResult<T>> {
    let (n, p) = (x_sorted.len(), theta_sorted.len());
    if a.len() != n || b.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "{n} points with {} weights, {p} atoms with {} weights",
            a.len(),
            b.len()
        )));
    }
    for (name, v) in [("x", x_sorted), ("theta", theta_sorted)] {
        if let Some(k) = v.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("{name}[{k}]")));
        }
        if let Some(k) = v.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be sorted ascending; {name}[{}] < {name}[{k}]",
                k + 1
            )));
        }
    }
    check_marginals(a, b)?;

    let mut mass = Array2::zeros((n, p));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    loop {
        let q = ra.min(rb);
        mass[[i, j]] += q;
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
    let half = T::lit(0.5);
    let cost = Array2::from_shape_fn((n, p), |(i, j)| {
        let r = x_sorted[i] - theta_sorted[j];
        half * r * r
    });
    let coupling = Coupling::with_tolerance(mass, a.to_owned(), b.to_owned(), marginal_tol())?;
    let objective = coupling.cost(cost.view());
    Ok(TransportPlanResult {
        coupling,
        objective,
        exact: true,
        converged: true,
        iterations: 0,
    })
}

/// Monotone coupling for unsorted inputs: sorts both sides (stably), applies
/// [`northwest_corner_1d`], and returns the plan indexed in the original orders.
pub fn monotone_coupling_1d<T: Scalar>(
    x: &[T],
    a: ArrayView1<'_, T>,
    theta: &[T],
    b: ArrayView1<'_, T>,
) -> Result<TransportPlanResult<T>> {
    if let Some(k) = x.iter().chain(theta).position(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!("input {k}")));
    }
    if a.len() != x.len() || b.len() != theta.len() {
        return Err(Error::ShapeMismatch("weights and supports differ in length".into()));
    }
    let order = |v: &[T]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).expect("finite").then(i.cmp(&j)));
        idx
    };
    let (ox, ot) = (order(x), order(theta));
    let xs: Vec<T> = ox.iter().map(|&i| x[i]).collect();
    let ts: Vec<T> = ot.iter().map(|&j| theta[j]).collect();
    let a_s = ndarray::Array1::from_iter(ox.iter().map(|&i| a[i]));
    let b_s = ndarray::Array1::from_iter(ot.iter().map(|&j| b[j]));
    let sorted = northwest_corner_1d(&xs, a_s.view(), &ts, b_s.view())?;
    let sm = sorted.coupling.mass();
    let mut mass = Array2::zeros((x.len(), theta.len()));
    for (si, &i) in ox.iter().enumerate() {
        for (sj, &j) in ot.iter().enumerate() {
            mass[[i, j]] = sm[[si, sj]];
        }
    }
    let coupling = Coupling::with_tolerance(mass, a.to_owned(), b.to_owned(), marginal_tol())?;
    Ok(TransportPlanResult {
        coupling,
        objective: sorted.objective,
        ..sorted
    })
}
