use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::{Error, Result, Scalar};

/// Default tolerance on coupling marginals for exact solvers.
pub(crate) fn marginal_tol<T: Scalar>() -> T {
    T::lit(1e-8).max(T::epsilon() * T::lit(1e3))
}

/// A nonnegative `n x p` matrix of transported mass with its two marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling<T> {
    mass: Array2<T>,
    row_marginal: Array1<T>,
    col_marginal: Array1<T>,
}

impl<T: Scalar> Coupling<T> {
    /// Validates entries and marginals against the exact-solver tolerance.
    pub fn new(mass: Array2<T>, row_marginal: Array1<T>, col_marginal: Array1<T>) -> Result<Self> {
        Self::with_tolerance(mass, row_marginal, col_marginal, marginal_tol())
    }

    /// Like [`Coupling::new`] with an explicit max-abs tolerance on row and column sums.
    pub fn with_tolerance(
        mass: Array2<T>,
        row_marginal: Array1<T>,
        col_marginal: Array1<T>,
        tol: T,
    ) -> Result<Self> {
        let (n, p) = mass.dim();
        if row_marginal.len() != n || col_marginal.len() != p {
            return Err(Error::ShapeMismatch(format!(
                "coupling is {n}x{p} but marginals have lengths {} and {}",
                row_marginal.len(),
                col_marginal.len()
            )));
        }
        if let Some(((i, j), v)) = mass.indexed_iter().find(|(_, v)| !(**v >= T::zero()) || !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("coupling entry ({i},{j}) = {v}")));
        }
        let c = Self {
            mass,
            row_marginal,
            col_marginal,
        };
        let (r, k) = (c.row_residual(), c.col_residual());
        if r > tol || k > tol {
            return Err(Error::InvalidMeasure(format!(
                "coupling marginal residuals {r:e} (rows) / {k:e} (columns) exceed {tol:e}"
            )));
        }
        Ok(c)
    }

    pub fn mass(&self) -> ArrayView2<'_, T> {
        self.mass.view()
    }

    pub fn row_marginal(&self) -> ArrayView1<'_, T> {
        self.row_marginal.view()
    }

    pub fn col_marginal(&self) -> ArrayView1<'_, T> {
        self.col_marginal.view()
    }

    pub fn nrows(&self) -> usize {
        self.mass.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.mass.ncols()
    }

    pub fn row_sums(&self) -> Array1<T> {
        self.mass.sum_axis(Axis(1))
    }

    pub fn col_sums(&self) -> Array1<T> {
        self.mass.sum_axis(Axis(0))
    }

    pub fn total_mass(&self) -> T {
        self.mass.iter().copied().sum()
    }

    /// Largest absolute deviation of a row sum from the row marginal.
    pub fn row_residual(&self) -> T {
        max_abs_diff(self.row_sums().view(), self.row_marginal.view())
    }

    pub fn col_residual(&self) -> T {
        max_abs_diff(self.col_sums().view(), self.col_marginal.view())
    }

    /// `Σ_ij Γ_ij C_ij`.
    pub fn cost(&self, cost: ArrayView2<'_, T>) -> T {
        self.mass
            .iter()
            .zip(cost.iter())
            .fold(T::zero(), |acc, (&g, &c)| acc + g * c)
    }

    /// Nonzero entries as `(i, j, mass)` triplets, skipping entries below `threshold`.
    pub fn triplets(&self, threshold: T) -> Vec<(usize, usize, T)> {
        self.mass
            .indexed_iter()
            .filter(|(_, &m)| m >= threshold && m > T::zero())
            .map(|((i, j), &m)| (i, j, m))
            .collect()
    }
}

fn max_abs_diff<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}
