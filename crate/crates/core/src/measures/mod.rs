//! Value types shared by every stage: point clouds, atomic probability measures,
//! couplings between them, and the additive noise models.

mod coupling;
mod noise;

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::{Error, Result, Scalar};

pub use coupling::Coupling;
pub(crate) use coupling::marginal_tol;
pub use noise::{noise_density, sample_noise, seeded_rng, NoiseModel, SimRng};

/// Two atoms closer than this (Euclidean) are treated as the same support point.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

/// Tolerance on `|Σ w - 1|` for a probability vector.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// An ordered list of `n` points in `R^d`, stored row-major (row `i` is point `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    points: Array2<T>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Array2<T>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return Err(Error::ShapeMismatch(format!(
                "point cloud needs n >= 1 and d >= 1, got {n}x{d}"
            )));
        }
        if let Some(((i, j), _)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("point {i}, coordinate {j}")));
        }
        Ok(Self {
            points: points.as_standard_layout().into_owned(),
        })
    }

    pub fn from_flat(n: usize, d: usize, values: Vec<T>) -> Result<Self> {
        let points = Array2::from_shape_vec((n, d), values)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(points)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::ShapeMismatch(format!(
                "row {i} has {} coordinates, expected {d}",
                rows[i].len()
            )));
        }
        Self::from_flat(rows.len(), d, rows.concat())
    }

    /// Points on the real line.
    pub fn from_scalars(values: &[T]) -> Result<Self> {
        Self::from_flat(values.len(), 1, values.to_vec())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        let d = self.d();
        &self.as_slice()[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        self.points.as_slice().expect("standard layout")
    }

    pub fn points(&self) -> ArrayView2<'_, T> {
        self.points.view()
    }

    pub fn into_inner(self) -> Array2<T> {
        self.points
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.as_slice().chunks_exact(self.d())
    }

    /// Coordinate `j` of every point, for `d = 1` this is the data itself.
    pub fn column(&self, j: usize) -> ArrayView1<'_, T> {
        self.points.column(j)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: self.points.select(Axis(0), indices),
        }
    }

    /// Groups rows lying within [`ATOM_MERGE_TOL`] of an earlier row.
    ///
    /// Returns the distinct rows in order of first occurrence together with, for each input
    /// row, the index of its representative in the output.
    pub fn dedup(&self) -> (Self, Vec<usize>) {
        let n = self.n();
        let tol = T::lit(ATOM_MERGE_TOL);
        let tol_sq = tol * tol;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.row(a)[0].partial_cmp(&self.row(b)[0]).unwrap().then(a.cmp(&b)));

        let mut pos_of = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            pos_of[i] = pos;
        }
        // rows are claimed by the smallest index within tolerance that is itself unclaimed
        let mut rep: Vec<usize> = (0..n).collect();
        let claim = |i: usize, k: usize, rep: &mut Vec<usize>| {
            if k > i && rep[k] == k && squared_distance(self.row(i), self.row(k)) <= tol_sq {
                rep[k] = i;
            }
        };
        for i in 0..n {
            if rep[i] != i {
                continue;
            }
            let x0 = self.row(i)[0];
            for &k in &order[pos_of[i] + 1..] {
                if self.row(k)[0] - x0 > tol {
                    break;
                }
                claim(i, k, &mut rep);
            }
            for &k in order[..pos_of[i]].iter().rev() {
                if x0 - self.row(k)[0] > tol {
                    break;
                }
                claim(i, k, &mut rep);
            }
        }
        let mut out_index = vec![usize::MAX; n];
        let mut kept = Vec::new();
        let mut map = vec![0; n];
        for i in 0..n {
            let r = rep[i];
            if out_index[r] == usize::MAX {
                out_index[r] = kept.len();
                kept.push(r);
            }
            map[i] = out_index[r];
        }
        (self.select(&kept), map)
    }

    /// Coordinate-wise minimum and maximum.
    pub fn bounds(&self) -> (Vec<T>, Vec<T>) {
        let d = self.d();
        let mut lo = vec![T::infinity(); d];
        let mut hi = vec![T::neg_infinity(); d];
        for row in self.rows() {
            for j in 0..d {
                lo[j] = lo[j].min(row[j]);
                hi[j] = hi[j].max(row[j]);
            }
        }
        (lo, hi)
    }

    pub fn mean(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.n());
        let mut m = vec![T::zero(); self.d()];
        for row in self.rows() {
            for (acc, &v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

#[inline]
pub(crate) fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Reason an atom/weight pair fails to be a valid atomic probability measure.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureViolation {
    Empty,
    ShapeMismatch { atoms: usize, weights: usize },
    NonFiniteAtom { index: usize },
    NonFiniteWeight { index: usize },
    NegativeWeight { index: usize, value: f64 },
    WeightSum { sum: f64 },
    DuplicateAtoms { first: usize, second: usize },
}

impl fmt::Display for MeasureViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "measure has no atoms"),
            Self::ShapeMismatch { atoms, weights } => {
                write!(f, "{atoms} atoms but {weights} weights")
            }
            Self::NonFiniteAtom { index } => write!(f, "atom {index} is not finite"),
            Self::NonFiniteWeight { index } => write!(f, "weight {index} is not finite"),
            Self::NegativeWeight { index, value } => {
                write!(f, "negative weight {value:e} at index {index}")
            }
            Self::WeightSum { sum } => write!(f, "weights sum to {sum}, expected 1"),
            Self::DuplicateAtoms { first, second } => {
                write!(f, "atoms {first} and {second} coincide")
            }
        }
    }
}

/// Checks the atomic-measure invariants and reports the first violation found.
///
/// Checks run in order: shape, finiteness, sign of each weight, total mass, distinct atoms.
pub fn validate_measure<T: Scalar>(
    atoms: ArrayView2<'_, T>,
    weights: ArrayView1<'_, T>,
) -> std::result::Result<(), MeasureViolation> {
    let p = atoms.nrows();
    if p == 0 || atoms.ncols() == 0 {
        return Err(MeasureViolation::Empty);
    }
    if weights.len() != p {
        return Err(MeasureViolation::ShapeMismatch {
            atoms: p,
            weights: weights.len(),
        });
    }
    if let Some(((i, _), _)) = atoms.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(MeasureViolation::NonFiniteAtom { index: i });
    }
    for (index, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            return Err(MeasureViolation::NonFiniteWeight { index });
        }
        if w < T::zero() {
            return Err(MeasureViolation::NegativeWeight {
                index,
                value: w.as_f64(),
            });
        }
    }
    let sum: f64 = weights.iter().map(|w| w.as_f64()).sum();
    let sum_tol = WEIGHT_SUM_TOL.max(T::epsilon().as_f64() * (p as f64 + 4.0));
    if (sum - 1.0).abs() > sum_tol {
        return Err(MeasureViolation::WeightSum { sum });
    }
    let tol_sq = T::lit(ATOM_MERGE_TOL * ATOM_MERGE_TOL);
    let rows: Vec<_> = atoms.outer_iter().collect();
    for a in 0..p {
        for b in a + 1..p {
            let dist = rows[a]
                .iter()
                .zip(rows[b].iter())
                .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
            if dist <= tol_sq {
                return Err(MeasureViolation::DuplicateAtoms { first: a, second: b });
            }
        }
    }
    Ok(())
}

/// A finitely supported probability measure `Σ_j w_j δ_{atom_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure<T> {
    atoms: PointCloud<T>,
    weights: Array1<T>,
}

impl<T: Scalar> AtomicMeasure<T> {
    /// Builds a measure, merging atoms closer than [`ATOM_MERGE_TOL`] by summing their weights.
    pub fn new(atoms: PointCloud<T>, weights: Array1<T>) -> Result<Self> {
        if weights.len() != atoms.n() {
            return Err(Error::InvalidMeasure(
                MeasureViolation::ShapeMismatch {
                    atoms: atoms.n(),
                    weights: weights.len(),
                }
                .to_string(),
            ));
        }
        let (distinct, map) = atoms.dedup();
        let weights = if distinct.n() == atoms.n() {
            weights
        } else {
            let mut merged = Array1::zeros(distinct.n());
            for (i, &w) in weights.iter().enumerate() {
                merged[map[i]] += w;
            }
            merged
        };
        validate_measure(distinct.points(), weights.view())
            .map_err(|v| Error::InvalidMeasure(v.to_string()))?;
        Ok(Self {
            atoms: distinct,
            weights,
        })
    }

    /// The empirical measure `(1/n) Σ_i δ_{x_i}`.
    pub fn empirical(points: &PointCloud<T>) -> Self {
        let n = T::from_usize_lossy(points.n());
        let w = Array1::from_elem(points.n(), T::one() / n);
        Self::new(points.clone(), w).expect("uniform weights on a valid cloud")
    }

    pub fn dirac(point: &[T]) -> Result<Self> {
        Self::new(
            PointCloud::from_flat(1, point.len(), point.to_vec())?,
            Array1::from_elem(1, T::one()),
        )
    }

    pub fn len(&self) -> usize {
        self.atoms.n()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn d(&self) -> usize {
        self.atoms.d()
    }

    pub fn atoms(&self) -> &PointCloud<T> {
        &self.atoms
    }

    pub fn weights(&self) -> ArrayView1<'_, T> {
        self.weights.view()
    }

    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.d()];
        for (row, &w) in self.atoms.rows().zip(self.weights.iter()) {
            for (acc, &v) in m.iter_mut().zip(row) {
                *acc += w * v;
            }
        }
        m
    }
}
