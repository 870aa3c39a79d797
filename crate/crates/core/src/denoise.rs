//! The full denoising pipeline: NPMLE deconvolution of the responses, optimal coupling of
//! the design measure to the estimated mixing measure, and barycentric projection.

use std::cmp::Ordering;

use ndarray::Array1;

use crate::measures::{AtomicMeasure, NoiseModel, PointCloud};
use crate::npmle::{
    fit_npmle, prune_to_measure, GridPolicy, NpmleMethod, NpmleOptions, NpmleSolution, DEFAULT_MAX_ITER,
    DEFAULT_PRUNE_THRESHOLD, DEFAULT_TOL,
};
use crate::transport::{
    barycentric_contraction, barycentric_projection, half_squared_cost, monotone_coupling_1d, sinkhorn_with,
    solve_kantorovich, wasserstein2_squared, ContractionCheck, SinkhornOptions, TransportPlanResult,
};
use crate::{Error, Result, Scalar};

/// How the design measure is coupled to the estimated mixing measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransportMethod<T> {
    /// Exact plan: the monotone rule when `d = 1`, the network simplex otherwise.
    ExactLp,
    /// Entropic plan with regularization `epsilon`.
    Sinkhorn { epsilon: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig<T> {
    /// Law of the additive noise, including its scale.
    pub noise: NoiseModel<T>,
    /// `None` picks [`GridPolicy::default_for`].
    pub grid: Option<GridPolicy>,
    pub npmle_tol: T,
    pub npmle_max_iter: usize,
    pub npmle_method: NpmleMethod,
    pub prune_threshold: T,
    pub transport: TransportMethod<T>,
}

impl<T: Scalar> DenoiseConfig<T> {
    pub fn new(noise: NoiseModel<T>) -> Self {
        Self {
            noise,
            grid: None,
            npmle_tol: T::lit(DEFAULT_TOL),
            npmle_max_iter: DEFAULT_MAX_ITER,
            npmle_method: NpmleMethod::default(),
            prune_threshold: T::lit(DEFAULT_PRUNE_THRESHOLD),
            transport: TransportMethod::ExactLp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.npmle_tol > T::zero() && self.npmle_tol.is_finite()) {
            return Err(Error::InvalidParameter(format!("npmle_tol must be positive, got {}", self.npmle_tol)));
        }
        if !(self.prune_threshold > T::zero() && self.prune_threshold < T::one()) {
            return Err(Error::InvalidParameter(format!(
                "prune_threshold must be in (0, 1), got {}",
                self.prune_threshold
            )));
        }
        if let TransportMethod::Sinkhorn { epsilon } = self.transport {
            if !(epsilon > T::zero() && epsilon.is_finite()) {
                return Err(Error::InvalidParameter(format!("Sinkhorn epsilon must be positive, got {epsilon}")));
            }
        }
        Ok(())
    }
}

/// `(1/n) Σ ‖f̂(X_i) − f*(X_i)‖²` against `(L/λ) 𝖶₂²(ν*_n, ν̂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskCertificate<T> {
    pub mse: T,
    pub w2_sq: T,
    pub bound: T,
    pub holds: bool,
}

/// Every intermediate of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResult<T> {
    /// `f̂(X_i)`, one row per design point.
    pub fhat: PointCloud<T>,
    /// Pruned and renormalized NPMLE.
    pub nu_hat: AtomicMeasure<T>,
    /// Unpruned NPMLE on the full grid.
    pub npmle: NpmleSolution<T>,
    /// Coupling of the uniform design measure (rows) with `ν̂` (columns).
    pub plan: TransportPlanResult<T>,
    /// Barycentric projection never increases transport cost.
    pub contraction: ContractionCheck<T>,
    pub certificate: Option<RiskCertificate<T>>,
}

/// Pipeline for `n` design points and `n` shuffled responses.
pub fn denoise_permuted<T: Scalar>(x: &PointCloud<T>, y: &PointCloud<T>, cfg: &DenoiseConfig<T>) -> Result<DenoiseResult<T>> {
    if x.n() != y.n() {
        return Err(Error::ShapeMismatch(format!(
            "permuted regression needs as many responses as design points, got n = {} and m = {}",
            x.n(),
            y.n()
        )));
    }
    denoise_unlinked(x, y, cfg)
}

/// Pipeline for `n` design points and `m` responses from an independent sample.
///
/// The estimate depends on `Y` only through its empirical measure: responses are put in
/// lexicographic order before the mixing measure is fitted, so any row permutation of `Y`
/// yields the identical result.
pub fn denoise_unlinked<T: Scalar>(x: &PointCloud<T>, y: &PointCloud<T>, cfg: &DenoiseConfig<T>) -> Result<DenoiseResult<T>> {
    cfg.validate()?;
    if x.d() != y.d() {
        return Err(Error::DimensionMismatch(format!("X has d = {} but Y has d = {}", x.d(), y.d())));
    }
    let d = x.d();
    let mut order: Vec<usize> = (0..y.n()).collect();
    order.sort_by(|&a, &b| lex_cmp(y.row(a), y.row(b)));
    let y_sorted = y.select(&order);

    let policy = cfg.grid.unwrap_or_else(|| GridPolicy::default_for(y.n(), d));
    let opts = NpmleOptions {
        tol: cfg.npmle_tol,
        max_iter: cfg.npmle_max_iter,
        method: cfg.npmle_method,
    };
    let npmle = fit_npmle(&y_sorted, &cfg.noise, policy, &opts)?;
    let nu_hat = prune_to_measure(&npmle, cfg.prune_threshold)?;

    let n = x.n();
    let a = Array1::from_elem(n, T::one() / T::from_usize_lossy(n));
    let atoms = nu_hat.atoms();
    let plan = match cfg.transport {
        TransportMethod::ExactLp if d == 1 => {
            monotone_coupling_1d(x.as_slice(), a.view(), atoms.as_slice(), nu_hat.weights())?
        }
        TransportMethod::ExactLp => {
            let cost = half_squared_cost(x, atoms)?;
            solve_kantorovich(cost.view(), a.view(), nu_hat.weights())?
        }
        TransportMethod::Sinkhorn { epsilon } => {
            let cost = half_squared_cost(x, atoms)?;
            let sopts = SinkhornOptions {
                epsilon,
                ..SinkhornOptions::default()
            };
            sinkhorn_with(cost.view(), a.view(), nu_hat.weights(), &sopts)?
        }
    };
    let fhat = barycentric_projection(&plan, atoms)?;
    let contraction = barycentric_contraction(&plan, x, atoms, &fhat)?;
    Ok(DenoiseResult {
        fhat,
        nu_hat,
        npmle,
        plan,
        contraction,
        certificate: None,
    })
}

fn lex_cmp<T: Scalar>(a: &[T], b: &[T]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(p, q)| p.partial_cmp(q).unwrap_or(Ordering::Equal))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Risk bound for an exact plan when `f* = ∇ψ` with `ψ` λ-strongly convex and L-smooth.
/// `truth` holds `f*(X_i)` for the design points in their original order.
pub fn risk_certificate<T: Scalar>(
    result: &DenoiseResult<T>,
    truth: &PointCloud<T>,
    lambda: T,
    smoothness: T,
) -> Result<RiskCertificate<T>> {
    if !(lambda > T::zero() && lambda.is_finite() && smoothness.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 0 < λ <= L, got λ = {lambda}, L = {smoothness}")));
    }
    if lambda > smoothness {
        return Err(Error::InvalidParameter(format!("λ = {lambda} exceeds L = {smoothness}")));
    }
    if truth.n() != result.fhat.n() || truth.d() != result.fhat.d() {
        return Err(Error::ShapeMismatch(format!(
            "truth is {}x{} but the estimate is {}x{}",
            truth.n(),
            truth.d(),
            result.fhat.n(),
            result.fhat.d()
        )));
    }
    let n = T::from_usize_lossy(truth.n());
    let mse = truth
        .rows()
        .zip(result.fhat.rows())
        .map(|(t, f)| crate::measures::squared_distance(t, f))
        .fold(T::zero(), |acc, v| acc + v)
        / n;
    let w2_sq = wasserstein2_squared(&AtomicMeasure::empirical(truth), &result.nu_hat)?;
    let bound = smoothness / lambda * w2_sq;
    Ok(RiskCertificate {
        mse,
        w2_sq,
        bound,
        holds: mse <= bound + T::lit(1e-9),
    })
}
