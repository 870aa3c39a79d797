use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use super::PointCloud;
use crate::{Error, Result, Scalar};

/// Random number generator used for every seeded draw in the crate.
pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Lower truncation of the exponential mixing variable in the Gaussian–Exponential
/// scale mixture. Without it the density is infinite at the origin.
pub const MIXING_T_MIN: f64 = 1e-8;

/// Additive noise law `ε` in `Y = θ + ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel<T> {
    /// `N(0, σ² I_d)`.
    GaussianIso { sigma: T },
    /// Laplace on the real line with density `exp(-|z|/b) / (2b)`.
    Laplace1D { scale: T },
    /// `σ · ξ · g` with `g ~ N(0, I_d)` and `ξ ~ Exp(1)` independent.
    GaussianExpMixture { sigma: T },
}

impl<T: Scalar> NoiseModel<T> {
    pub fn gaussian(sigma: T) -> Result<Self> {
        check_positive("sigma", sigma)?;
        Ok(Self::GaussianIso { sigma })
    }

    pub fn laplace_1d(scale: T) -> Result<Self> {
        check_positive("Laplace scale", scale)?;
        Ok(Self::Laplace1D { scale })
    }

    pub fn gaussian_exp_mixture(sigma: T) -> Result<Self> {
        check_positive("sigma", sigma)?;
        Ok(Self::GaussianExpMixture { sigma })
    }

    /// The scale parameter (`σ` or `b`).
    pub fn scale(&self) -> T {
        match *self {
            Self::GaussianIso { sigma } | Self::GaussianExpMixture { sigma } => sigma,
            Self::Laplace1D { scale } => scale,
        }
    }

    /// The law of `c · ε`.
    pub fn scaled(&self, c: T) -> Result<Self> {
        check_positive("noise scale factor", c)?;
        match *self {
            Self::GaussianIso { sigma } => Self::gaussian(sigma * c),
            Self::Laplace1D { scale } => Self::laplace_1d(scale * c),
            Self::GaussianExpMixture { sigma } => Self::gaussian_exp_mixture(sigma * c),
        }
    }

    pub fn variance_per_coordinate(&self) -> T {
        let s = self.scale();
        match self {
            Self::GaussianIso { .. } => s * s,
            Self::Laplace1D { .. } | Self::GaussianExpMixture { .. } => T::lit(2.0) * s * s,
        }
    }

    /// Validates the model parameters and that the model makes sense in dimension `d`.
    pub fn check(&self, d: usize) -> Result<()> {
        check_positive("noise scale", self.scale())?;
        if d == 0 {
            return Err(Error::DimensionMismatch("noise dimension must be >= 1".into()));
        }
        if matches!(self, Self::Laplace1D { .. }) && d != 1 {
            return Err(Error::DimensionMismatch(format!(
                "Laplace1D noise requires d = 1, got d = {d}"
            )));
        }
        Ok(())
    }

    /// Density of the noise at `z`.
    pub fn density(&self, z: &[T]) -> Result<T> {
        self.check(z.len())?;
        Ok(self.density_unchecked(z))
    }

    /// Density at `z` without parameter or dimension validation.
    pub(crate) fn density_unchecked(&self, z: &[T]) -> T {
        match *self {
            Self::Laplace1D { scale } => {
                (-(z[0].abs() / scale)).exp() / (T::lit(2.0) * scale)
            }
            Self::GaussianIso { sigma } => {
                let r2 = z.iter().fold(T::zero(), |acc, &v| acc + v * v);
                let var = sigma * sigma;
                let norm = (T::lit(2.0 * PI) * var).powf(T::lit(-0.5 * z.len() as f64));
                norm * (-(r2 / (T::lit(2.0) * var))).exp()
            }
            Self::GaussianExpMixture { sigma } => {
                let sigma = sigma.as_f64();
                let r2: f64 = z.iter().map(|v| v.as_f64() * v.as_f64()).sum();
                let d = z.len();
                let norm = (2.0 * PI * sigma * sigma).powf(-0.5 * d as f64);
                T::lit(norm * exp_mixture_integral(d, r2 / (sigma * sigma)))
            }
        }
    }

    /// `count` i.i.d. draws in `R^d` from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize, d: usize) -> Result<PointCloud<T>> {
        self.check(d)?;
        if count == 0 {
            return Err(Error::InvalidParameter("sample count must be >= 1".into()));
        }
        let scale = self.scale().as_f64();
        let mut out = Vec::with_capacity(count * d);
        for _ in 0..count {
            match self {
                Self::GaussianIso { .. } => {
                    for _ in 0..d {
                        let g: f64 = rng.sample(StandardNormal);
                        out.push(T::lit(scale * g));
                    }
                }
                Self::Laplace1D { .. } => {
                    let a: f64 = rng.sample(Exp1);
                    let b: f64 = rng.sample(Exp1);
                    out.push(T::lit(scale * (a - b)));
                }
                Self::GaussianExpMixture { .. } => {
                    let start = out.len();
                    for _ in 0..d {
                        let g: f64 = rng.sample(StandardNormal);
                        out.push(T::lit(g));
                    }
                    let xi: f64 = rng.sample(Exp1);
                    for v in &mut out[start..] {
                        *v = T::lit(scale * xi * v.as_f64());
                    }
                }
            }
        }
        PointCloud::from_flat(count, d, out)
    }
}

fn check_positive<T: Scalar>(what: &str, v: T) -> Result<()> {
    if v.is_finite() && v > T::zero() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be positive and finite, got {v}")))
    }
}

/// Density of `model` at `z`.
pub fn noise_density<T: Scalar>(model: &NoiseModel<T>, z: &[T]) -> Result<T> {
    model.density(z)
}

/// `count` i.i.d. draws in `R^d`, deterministic in `seed`.
pub fn sample_noise<T: Scalar>(model: &NoiseModel<T>, count: usize, d: usize, seed: u64) -> Result<PointCloud<T>> {
    model.sample(&mut seeded_rng(seed), count, d)
}

/// `∫_{t_min}^∞ e^{-t} t^{-d} exp(-s²/(2t²)) dt` for `s² = ‖z‖²/σ²`.
///
/// Evaluated in `u = ln t`, where the log-integrand
/// `φ(u) = -(d-1)u - e^u - (s²/2)e^{-2u}` is strictly concave. The trapezoid rule on a
/// uniform `u` grid covering `φ ≥ φ_max - 40` converges geometrically; when the lower
/// truncation cuts through non-negligible mass, Euler–Maclaurin end corrections are added.
pub(crate) fn exp_mixture_integral(d: usize, s2: f64) -> f64 {
    let dm1 = (d as f64) - 1.0;
    let phi = |u: f64| -dm1 * u - u.exp() - 0.5 * s2 * (-2.0 * u).exp();
    let dphi = |u: f64| -dm1 - u.exp() + s2 * (-2.0 * u).exp();
    let d2phi = |u: f64| -u.exp() - 2.0 * s2 * (-2.0 * u).exp();
    let d3phi = |u: f64| -u.exp() + 4.0 * s2 * (-2.0 * u).exp();
    let u_min = MIXING_T_MIN.ln();

    let peak = if dphi(u_min) <= 0.0 {
        u_min
    } else {
        // φ' is strictly decreasing; φ'(ln(s²)/3 + 1) < 0
        let mut lo = u_min;
        let mut hi = (s2.ln() / 3.0 + 1.0).max(u_min + 1.0);
        let mut u = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = dphi(u);
            if g > 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            let newton = u - g / d2phi(u);
            u = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-13 * (1.0 + u.abs()) || g.abs() < 1e-14 {
                break;
            }
        }
        u
    };
    let phi_peak = phi(peak);
    let h = 0.125f64.min(0.25 / (-d2phi(peak)).sqrt());
    let cutoff = phi_peak - 40.0;

    let mut left = peak;
    while left > u_min && phi(left) > cutoff {
        left -= h;
    }
    let at_boundary = left <= u_min;
    if at_boundary {
        left = u_min;
    }
    let f = |u: f64| (phi(u) - phi_peak).exp();
    let mut sum = 0.5 * f(left);
    let mut k = 1usize;
    loop {
        let u = left + k as f64 * h;
        let v = f(u);
        sum += v;
        if u > peak && phi(u) < cutoff {
            break;
        }
        k += 1;
    }
    let mut integral = h * sum;
    if at_boundary {
        let (p1, p2, p3) = (dphi(left), d2phi(left), d3phi(left));
        let f0 = f(left);
        let f1 = p1 * f0;
        let f3 = (p3 + 3.0 * p1 * p2 + p1 * p1 * p1) * f0;
        integral += h * h / 12.0 * f1 - h.powi(4) / 720.0 * f3;
    }
    integral * phi_peak.exp()
}
