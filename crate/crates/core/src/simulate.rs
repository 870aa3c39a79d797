//! Ground-truth generators: design laws, the regression functions `f* = ∇ψ` of every
//! shipped scenario, noise application and shuffling. Everything here is `f64`.

use std::f64::consts::E;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::assignment::{cycle_report, CycleReport, Permutation};
use crate::measures::{seeded_rng, NoiseModel, PointCloud, SimRng};
use crate::{Error, Result};

/// Regression function `f*`, always the gradient of a convex potential `ψ`.
#[derive(Debug, Clone, PartialEq)]
pub enum FStarSpec {
    /// `x ↦ Bx` with `B` symmetric positive semidefinite (row-major `d×d`).
    Psd { b: Vec<f64>, d: usize },
    /// `(3/2)(√x_1, …, √x_d)` on the nonnegative orthant.
    Sep1p5Sqrt,
    /// `½ (x/‖x‖) exp(‖x‖/2)`, `x ≠ 0`.
    ExpNorm,
    Linear1D,
    Constant1D(f64),
    /// `2` on `x < 5`, `8` on `x ≥ 5`.
    Step2,
    /// `0` below `10/3`, `5` on `[10/3, 20/3)`, `10` from `20/3` on.
    Step3,
    /// `sign(x − 5)(x − 5)⁴`.
    Power,
    /// `a_j` for the first `j` maximizing `⟨a_j, x⟩`; atoms stored row-major `k×d`.
    Cluster { atoms: Vec<f64>, d: usize },
    /// `Σ_j ⟨x, v_j⟩ v_j` for orthonormal `v_j`, stored row-major `k×d`.
    LinearK { directions: Vec<f64>, d: usize },
    /// `((x_j + 1)^{1/2})_j` for `x_j ≥ −1`.
    SeparableSqrt,
    /// `x/‖x‖`, `x ≠ 0`.
    Sphere,
    /// `x exp(‖x‖²/2)`.
    Radial,
}

impl FStarSpec {
    /// Ambient dimension when the variant carries one.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            Self::Psd { d, .. } | Self::Cluster { d, .. } | Self::LinearK { d, .. } => Some(*d),
            Self::Linear1D | Self::Constant1D(_) | Self::Step2 | Self::Step3 | Self::Power => Some(1),
            _ => None,
        }
    }

    /// `B = W / df` with `W ~ Wishart(I_d, df = 2d)`.
    pub fn random_psd<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let df = 2 * d;
        let z: Vec<f64> = (0..df * d).map(|_| rng.sample(StandardNormal)).collect();
        let mut b = vec![0.0; d * d];
        for row in z.chunks_exact(d) {
            for r in 0..d {
                for c in 0..=r {
                    b[r * d + c] += row[r] * row[c];
                }
            }
        }
        for r in 0..d {
            for c in 0..=r {
                let v = b[r * d + c] / df as f64;
                b[r * d + c] = v;
                b[c * d + r] = v;
            }
        }
        Self::Psd { b, d }
    }

    /// `k` atoms drawn from `N(0, I_d)`.
    pub fn random_cluster<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Self {
        let atoms = (0..k * d).map(|_| rng.sample(StandardNormal)).collect();
        Self::Cluster { atoms, d }
    }

    /// `k ≤ d` Gaussian directions, orthonormalized by Householder QR.
    pub fn random_linear_k<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::InvalidParameter(format!("linear-k needs 1 <= k <= d, got k = {k}, d = {d}")));
        }
        let g = DMatrix::<f64>::from_fn(d, k, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        let mut directions = Vec::with_capacity(k * d);
        for j in 0..k {
            directions.extend(q.column(j).iter());
        }
        Ok(Self::LinearK { directions, d })
    }

    /// Checks the structural invariants (`B` symmetric PSD, directions orthonormal).
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Psd { b, d } => {
                let d = *d;
                if b.len() != d * d || d == 0 {
                    return Err(Error::ShapeMismatch(format!("B has {} entries for d = {d}", b.len())));
                }
                let m = DMatrix::from_row_slice(d, d, b);
                if (&m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                    return Err(Error::Domain("B is not symmetric".into()));
                }
                let min = SymmetricEigen::new(m).eigenvalues.min();
                if min < -1e-10 {
                    return Err(Error::Domain(format!("B has eigenvalue {min:e} < 0")));
                }
            }
            Self::LinearK { directions, d } => {
                let d = *d;
                if d == 0 || directions.is_empty() || directions.len() % d != 0 {
                    return Err(Error::ShapeMismatch("direction matrix is not k×d".into()));
                }
                let v: Vec<&[f64]> = directions.chunks_exact(d).collect();
                for (a, va) in v.iter().enumerate() {
                    for (b, vb) in v.iter().enumerate() {
                        let ip: f64 = va.iter().zip(*vb).map(|(x, y)| x * y).sum();
                        let want = if a == b { 1.0 } else { 0.0 };
                        if (ip - want).abs() > 1e-12 {
                            return Err(Error::Domain(format!("directions {a}, {b} have inner product {ip}")));
                        }
                    }
                }
            }
            Self::Cluster { atoms, d } => {
                if *d == 0 || atoms.is_empty() || atoms.len() % d != 0 {
                    return Err(Error::ShapeMismatch("cluster atoms are not k×d".into()));
                }
            }
            Self::Constant1D(c) if !c.is_finite() => {
                return Err(Error::NonFinite("constant value".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Evaluates `f*(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if let Some(d) = self.fixed_dim() {
            if x.len() != d {
                return Err(Error::DimensionMismatch(format!("f* expects d = {d}, got {}", x.len())));
            }
        }
        if x.is_empty() {
            return Err(Error::DimensionMismatch("empty point".into()));
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nonzero = |name: &str| {
            if norm > 0.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} is undefined at the origin")))
            }
        };
        Ok(match self {
            Self::Psd { b, d } => (0..*d).map(|r| (0..*d).map(|c| b[r * d + c] * x[c]).sum()).collect(),
            Self::Sep1p5Sqrt => {
                if let Some(j) = x.iter().position(|&v| v < 0.0) {
                    return Err(Error::Domain(format!("sep needs x >= 0, coordinate {j} = {}", x[j])));
                }
                x.iter().map(|v| 1.5 * v.sqrt()).collect()
            }
            Self::ExpNorm => {
                nonzero("exp-norm")?;
                let s = 0.5 * (norm / 2.0).exp() / norm;
                x.iter().map(|v| s * v).collect()
            }
            Self::Linear1D => vec![x[0]],
            Self::Constant1D(c) => vec![*c],
            Self::Step2 => vec![if x[0] < 5.0 { 2.0 } else { 8.0 }],
            Self::Step3 => vec![if x[0] < 10.0 / 3.0 {
                0.0
            } else if x[0] < 20.0 / 3.0 {
                5.0
            } else {
                10.0
            }],
            Self::Power => {
                let t = x[0] - 5.0;
                vec![t.signum() * t.powi(4)]
            }
            Self::Cluster { atoms, d } => {
                let mut best = (0, f64::NEG_INFINITY);
                for (j, a) in atoms.chunks_exact(*d).enumerate() {
                    let ip: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
                    if ip > best.1 {
                        best = (j, ip);
                    }
                }
                atoms[best.0 * d..(best.0 + 1) * d].to_vec()
            }
            Self::LinearK { directions, d } => {
                let mut out = vec![0.0; *d];
                for v in directions.chunks_exact(*d) {
                    let ip: f64 = v.iter().zip(x).map(|(p, q)| p * q).sum();
                    out.iter_mut().zip(v).for_each(|(o, vi)| *o += ip * vi);
                }
                out
            }
            Self::SeparableSqrt => {
                if let Some(j) = x.iter().position(|&v| v < -1.0) {
                    return Err(Error::Domain(format!("separable needs x >= -1, coordinate {j} = {}", x[j])));
                }
                x.iter().map(|v| (v + 1.0).sqrt()).collect()
            }
            Self::Sphere => {
                nonzero("sphere")?;
                x.iter().map(|v| v / norm).collect()
            }
            Self::Radial => {
                let s = (0.5 * norm * norm).exp();
                x.iter().map(|v| s * v).collect()
            }
        })
    }

    /// Row-wise `f*` over a cloud.
    pub fn eval_cloud(&self, x: &PointCloud<f64>) -> Result<PointCloud<f64>> {
        let rows = x.rows().map(|r| self.eval(r)).collect::<Result<Vec<_>>>()?;
        PointCloud::from_rows(&rows)
    }

    /// Design law on which the function is naturally studied.
    pub fn natural_design(&self) -> Design {
        match self {
            Self::Psd { .. } | Self::ExpNorm => Design::GaussianStd,
            Self::Sep1p5Sqrt | Self::SeparableSqrt => Design::UniformCube,
            Self::Linear1D | Self::Constant1D(_) | Self::Step2 | Self::Step3 | Self::Power => Design::Uniform1D,
            Self::Cluster { .. } | Self::LinearK { .. } | Self::Sphere | Self::Radial => Design::UniformBall,
        }
    }

    /// Strong convexity and smoothness constants `(λ, L)` of `ψ` on the natural design's
    /// support, when they exist and are known in closed form.
    pub fn convexity_constants(&self) -> Option<(f64, f64)> {
        match self {
            Self::Linear1D => Some((1.0, 1.0)),
            // f_j' = ½ (x_j + 1)^{-1/2} on [0, 1]
            Self::SeparableSqrt => Some((1.0 / (2.0 * 2f64.sqrt()), 0.5)),
            // ∇²ψ = e^{‖x‖²/2}(I + xxᵀ) on the unit ball
            Self::Radial => Some((1.0, 3.0 * E.sqrt())),
            _ => None,
        }
    }
}

/// Law of the design points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    GaussianStd,
    /// `U([0, 1]^d)`.
    UniformCube,
    /// Uniform on the unit Euclidean ball.
    UniformBall,
    /// `U(0, 10)` on the line.
    Uniform1D,
}

impl Design {
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, d: usize, rng: &mut R) -> Result<PointCloud<f64>> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter(format!("design needs n, d >= 1, got n = {n}, d = {d}")));
        }
        let mut out = Vec::with_capacity(n * d);
        match self {
            Self::GaussianStd => out.extend((0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal))),
            Self::UniformCube => {
                let u = Uniform::new(0.0, 1.0).expect("valid range");
                out.extend((0..n * d).map(|_| rng.sample(u)));
            }
            Self::Uniform1D => {
                if d != 1 {
                    return Err(Error::DimensionMismatch(format!("U(0, 10) design needs d = 1, got {d}")));
                }
                let u = Uniform::new(0.0, 10.0).expect("valid range");
                out.extend((0..n).map(|_| rng.sample(u)));
            }
            Self::UniformBall => {
                // direction uniform on the sphere, radius U^{1/d}
                for _ in 0..n {
                    let g: Vec<f64> = loop {
                        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                        if g.iter().any(|&v| v != 0.0) {
                            break g;
                        }
                    };
                    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let u: f64 = rng.random();
                    let r = u.powf(1.0 / d as f64);
                    out.extend(g.iter().map(|v| r * v / norm));
                }
            }
        }
        PointCloud::from_flat(n, d, out)
    }
}

/// How the ground truth for a scenario's regression function is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FStarKind {
    Psd,
    Sep1p5Sqrt,
    ExpNorm,
    Linear1D,
    Constant1D,
    Step2,
    Step3,
    Power,
    /// Number of atoms.
    Cluster(usize),
    /// Number of directions.
    LinearK(usize),
    SeparableSqrt,
    Sphere,
    Radial,
}

/// Default number of cluster atoms.
pub const DEFAULT_CLUSTER_ATOMS: usize = 5;

impl FStarKind {
    /// Instantiates the function, drawing random parameters (Wishart matrix, atoms,
    /// directions) from `rng`.
    pub fn instantiate<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<FStarSpec> {
        Ok(match *self {
            Self::Psd => FStarSpec::random_psd(d, rng),
            Self::Sep1p5Sqrt => FStarSpec::Sep1p5Sqrt,
            Self::ExpNorm => FStarSpec::ExpNorm,
            Self::Linear1D => FStarSpec::Linear1D,
            Self::Constant1D => FStarSpec::Constant1D(0.0),
            Self::Step2 => FStarSpec::Step2,
            Self::Step3 => FStarSpec::Step3,
            Self::Power => FStarSpec::Power,
            Self::Cluster(k) => {
                if k == 0 {
                    return Err(Error::InvalidParameter("cluster needs k >= 1".into()));
                }
                FStarSpec::random_cluster(k, d, rng)
            }
            Self::LinearK(k) => FStarSpec::random_linear_k(k, d, rng)?,
            Self::SeparableSqrt => FStarSpec::SeparableSqrt,
            Self::Sphere => FStarSpec::Sphere,
            Self::Radial => FStarSpec::Radial,
        })
    }
}

/// A named simulation configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub fstar: FStarKind,
    pub design: Design,
    /// Unit-scale noise law; responses get `noise_scale · ε`.
    pub noise: NoiseModel<f64>,
    pub noise_scale: f64,
    pub n: usize,
    /// Number of responses in unlinked mode, drawn at fresh design points.
    pub m: Option<usize>,
    pub d: usize,
    pub seed: u64,
    /// Draw a uniformly random `π*`; otherwise `π*` is the identity.
    pub shuffle: bool,
}

/// Scenario names accepted by [`ScenarioSpec::named`].
pub const SCENARIO_NAMES: [&str; 13] = [
    "psd",
    "sep",
    "exp-norm",
    "linear1d",
    "constant1d",
    "step2",
    "step3",
    "power",
    "cluster",
    "linear-k",
    "separable",
    "sphere",
    "radial",
];

/// Noise level of the multivariate denoising scenarios.
pub const SIGMA_MULTIVARIATE: f64 = 1.0 / 16.0;

impl ScenarioSpec {
    /// The published configuration for `name` with Gaussian noise. Recovery scenarios
    /// shuffle the responses; denoising scenarios keep `π*` the identity. For `linear-k`
    /// the number of directions defaults to `d`.
    pub fn named(name: &str, n: usize, d: usize, seed: u64) -> Result<Self> {
        let unit = NoiseModel::gaussian(1.0)?;
        let (fstar, design, scale, shuffle, dim) = match name {
            "psd" => (FStarKind::Psd, Design::GaussianStd, 1.5f64.sqrt(), true, None),
            "sep" => (FStarKind::Sep1p5Sqrt, Design::UniformCube, (2.0f64 / 7.0).sqrt(), true, None),
            "exp-norm" => (FStarKind::ExpNorm, Design::GaussianStd, 4.0, true, None),
            "linear1d" => (FStarKind::Linear1D, Design::Uniform1D, 1.0, false, Some(1)),
            "constant1d" => (FStarKind::Constant1D, Design::Uniform1D, 1.0, false, Some(1)),
            "step2" => (FStarKind::Step2, Design::Uniform1D, 1.0, false, Some(1)),
            "step3" => (FStarKind::Step3, Design::Uniform1D, 1.0, false, Some(1)),
            "power" => (FStarKind::Power, Design::Uniform1D, 1.0, false, Some(1)),
            "cluster" => (FStarKind::Cluster(DEFAULT_CLUSTER_ATOMS), Design::UniformBall, SIGMA_MULTIVARIATE, false, None),
            "linear-k" => (FStarKind::LinearK(d), Design::UniformBall, SIGMA_MULTIVARIATE, false, None),
            "separable" => (FStarKind::SeparableSqrt, Design::UniformCube, SIGMA_MULTIVARIATE, false, None),
            "sphere" => (FStarKind::Sphere, Design::UniformBall, SIGMA_MULTIVARIATE, false, None),
            "radial" => (FStarKind::Radial, Design::UniformBall, SIGMA_MULTIVARIATE, false, None),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown scenario `{other}`; expected one of {}",
                    SCENARIO_NAMES.join(", ")
                )))
            }
        };
        if let Some(req) = dim {
            if d != req {
                return Err(Error::DimensionMismatch(format!("scenario {name} needs d = {req}, got {d}")));
            }
        }
        Ok(Self {
            name: name.to_string(),
            fstar,
            design,
            noise: unit,
            noise_scale: scale,
            n,
            m: None,
            d,
            seed,
            shuffle,
        })
    }

    /// Heavy-tailed variant: Laplace(1) on the line, the Gaussian–exponential scale mixture
    /// in higher dimension.
    pub fn with_laplace_noise(mut self) -> Result<Self> {
        self.noise = if self.d == 1 {
            NoiseModel::laplace_1d(1.0)?
        } else {
            NoiseModel::gaussian_exp_mixture(1.0)?
        };
        Ok(self)
    }

    /// The noise law of `noise_scale · ε`.
    pub fn effective_noise(&self) -> Result<NoiseModel<f64>> {
        self.noise.scaled(self.noise_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.m == Some(0) {
            return Err(Error::InvalidParameter("scenario needs n, m, d >= 1".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise scale must be >= 0, got {}", self.noise_scale)));
        }
        self.noise.check(self.d)
    }
}

/// Output of [`generate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub fstar: FStarSpec,
    pub x: PointCloud<f64>,
    pub y: PointCloud<f64>,
    /// `f*(X_i)` for the `n` design points.
    pub truth: PointCloud<f64>,
    /// `Y_i = truth_{π*(i)} + noise`; `None` in unlinked mode.
    pub pi_star: Option<Permutation>,
}

fn add_noise(
    spec: &ScenarioSpec,
    clean: &PointCloud<f64>,
    rng: &mut SimRng,
) -> Result<PointCloud<f64>> {
    if spec.noise_scale == 0.0 {
        return Ok(clean.clone());
    }
    let eps = spec.noise.sample(rng, clean.n(), clean.d())?;
    PointCloud::new(clean.points().to_owned() + &(eps.points().to_owned() * spec.noise_scale))
}

/// Draws `(X, Y, f*(X), π*)`. Random draws happen in a fixed order from one generator
/// seeded with `spec.seed`: parameters of `f*`, the design, `π*`, the noise, and in unlinked
/// mode the fresh design and its noise.
pub fn generate_dataset(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let fstar = spec.fstar.instantiate(spec.d, &mut rng)?;
    let x = spec.design.sample(spec.n, spec.d, &mut rng)?;
    let truth = fstar.eval_cloud(&x)?;
    match spec.m {
        None => {
            let mut map: Vec<usize> = (0..spec.n).collect();
            if spec.shuffle {
                map.shuffle(&mut rng);
            }
            let pi = Permutation::new(map)?;
            let shuffled = truth.select(pi.as_slice());
            let y = add_noise(spec, &shuffled, &mut rng)?;
            Ok(Dataset {
                fstar,
                x,
                y,
                truth,
                pi_star: Some(pi),
            })
        }
        Some(m) => {
            let x_fresh = spec.design.sample(m, spec.d, &mut rng)?;
            let clean = fstar.eval_cloud(&x_fresh)?;
            let y = add_noise(spec, &clean, &mut rng)?;
            Ok(Dataset {
                fstar,
                x,
                y,
                truth,
                pi_star: None,
            })
        }
    }
}

/// Samples `samples` points from the function's natural design and runs the exhaustive
/// cycle search (cycles of length ≤ 4) on the pairs `(x, f*(x))`.
pub fn fstar_is_gradient_check(spec: &FStarSpec, d: usize, samples: usize, seed: u64) -> Result<CycleReport<f64>> {
    let d = spec.fixed_dim().unwrap_or(d);
    let mut rng = seeded_rng(seed);
    let x = spec.natural_design().sample(samples, d, &mut rng)?;
    let y = spec.eval_cloud(&x)?;
    cycle_report(&x, &y, 4)
}
