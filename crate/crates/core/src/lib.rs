//! Permuted and unlinked monotone regression in `R^d`.
//!
//! Two tasks are covered:
//!
//! * **Permutation recovery.** Given shuffled designs `X` and responses `Y = f*(X_{π*}) + ε`
//!   with `f*` the gradient of a convex function, [`assignment::recover_permutation`] solves
//!   the squared-distance linear assignment problem to estimate `π*`.
//! * **Denoising.** [`denoise::denoise_permuted`] and [`denoise::denoise_unlinked`] estimate
//!   `f*(X_i)` by deconvolving the responses with a grid Kiefer–Wolfowitz NPMLE
//!   ([`npmle`]), coupling the design measure to the estimated mixing measure with an exact
//!   optimal transport plan ([`transport`]), and taking barycentric projections.
//!
//! The numerical core is generic over the floating point type through [`Scalar`]; the
//! `*64` aliases below pin it to `f64`, which is what the simulation harness and the CLI use.

pub mod assignment;
pub mod denoise;
mod error;
pub mod experiments;
pub mod io;
mod linalg;
pub mod measures;
pub mod npmle;
mod scalar;
pub mod simulate;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PointCloud64 = measures::PointCloud<f64>;
pub type PointCloud32 = measures::PointCloud<f32>;
pub type AtomicMeasure64 = measures::AtomicMeasure<f64>;
pub type AtomicMeasure32 = measures::AtomicMeasure<f32>;
pub type NoiseModel64 = measures::NoiseModel<f64>;
pub type NoiseModel32 = measures::NoiseModel<f32>;
pub type Coupling64 = measures::Coupling<f64>;
pub type AssignmentResult64 = assignment::AssignmentResult<f64>;
pub type NpmleSolution64 = npmle::NpmleSolution<f64>;
pub type TransportPlan64 = transport::TransportPlanResult<f64>;
pub type DenoiseConfig64 = denoise::DenoiseConfig<f64>;
pub type DenoiseResult64 = denoise::DenoiseResult<f64>;
