use rayon::prelude::*;

use crate::Scalar;

/// Rows below this many columns are updated serially.
const PARALLEL_MIN: usize = 128;

/// Lower Cholesky factor `A = R Rᵀ`, written over the lower triangle of `a`.
pub(crate) fn cholesky_factor<T: Scalar>(a: &mut [T], k: usize) -> bool {
    debug_assert_eq!(a.len(), k * k);
    for j in 0..k {
        let (head, tail) = a.split_at_mut((j + 1) * k);
        let rj = &mut head[j * k..];
        let s = rj[j] - dot(&rj[..j], &rj[..j]);
        if !(s > T::zero()) || !s.is_finite() {
            return false;
        }
        let pivot = s.sqrt();
        rj[j] = pivot;
        let rj = &head[j * k..j * k + j];
        let update = |ri: &mut [T]| {
            ri[j] = (ri[j] - dot(&ri[..j], rj)) / pivot;
        };
        if (k - j) * j >= PARALLEL_MIN * PARALLEL_MIN {
            tail.par_chunks_mut(k).for_each(update);
        } else {
            tail.chunks_mut(k).for_each(update);
        }
    }
    true
}

/// Solves with a factor from [`cholesky_factor`], overwriting `b`.
pub(crate) fn cholesky_apply<T: Scalar>(r: &[T], b: &mut [T], k: usize) {
    debug_assert_eq!(b.len(), k);
    for i in 0..k {
        b[i] = (b[i] - dot(&r[i * k..i * k + i], &b[..i])) / r[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for l in i + 1..k {
            s -= r[l * k + i] * b[l];
        }
        b[i] = s / r[i * k + i];
    }
}

/// Inner product with four independent accumulators.
#[inline]
pub(crate) fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (p, q) in xc.zip(yc) {
        for t in 0..4 {
            acc[t] += p[t] * q[t];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&p, &q) in xr.iter().zip(yr) {
        s += p * q;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        let mut a = vec![4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let orig = a.clone();
        let x = [1.0, -2.0, 0.5];
        let mut b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| orig[i * 3 + j] * x[j]).sum()).collect();
        assert!(cholesky_factor(&mut a, 3));
        cholesky_apply(&a, &mut b, 3);
        for (got, want) in b.iter().zip(x) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_singular() {
        let mut a = vec![1.0, 1.0, 1.0, 1.0];
        assert!(!cholesky_factor(&mut a, 2));
    }

    #[test]
    fn factor_once_two_right_hand_sides() {
        let k = 300;
        // diagonally dominant, large enough for the parallel path
        let a: Vec<f64> = (0..k * k)
            .map(|t| {
                let (i, j) = (t / k, t % k);
                if i == j { k as f64 } else { 1.0 / (1.0 + (i + j) as f64) }
            })
            .collect();
        let mut r = a.clone();
        assert!(cholesky_factor(&mut r, k));
        for seed in 0..2 {
            let x: Vec<f64> = (0..k).map(|i| ((i * 7 + seed) % 11) as f64 - 5.0).collect();
            let mut b: Vec<f64> = (0..k).map(|i| (0..k).map(|j| a[i * k + j] * x[j]).sum()).collect();
            cholesky_apply(&r, &mut b, k);
            for (got, want) in b.iter().zip(&x) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dot_matches_naive() {
        let x: Vec<f64> = (0..11).map(|v| v as f64).collect();
        assert_eq!(dot(&x, &x), (0..11).map(|v| (v * v) as f64).sum::<f64>());
    }
}
