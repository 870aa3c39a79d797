use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use unlinked::assignment::{
    assignment_cost, brute_force_lap, cycle_report, recover_permutation, recovery_cost, scaled_hamming, solve_lap,
    Permutation,
};
use unlinked::denoise::{denoise_permuted, denoise_unlinked, DenoiseConfig};
use unlinked::experiments::{quantile, stats, summarize, Metric, ReplicationRecord};
use unlinked::measures::{sample_noise, seeded_rng, NoiseModel, PointCloud};
use unlinked::npmle::{build_grid, fit_npmle, likelihood_matrix, loglik, solve_npmle_with, GridPolicy, NpmleMethod, NpmleOptions};
use unlinked::simulate::{fstar_is_gradient_check, generate_dataset, Design, FStarKind, FStarSpec, ScenarioSpec};
use unlinked::transport::{
    barycentric_contraction, barycentric_projection, half_squared_cost, monotone_coupling_1d, sinkhorn,
    solve_kantorovich,
};

fn cost_matrix(max_n: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(-10.0..10.0f64, n * n).prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
    })
}

fn int_cost_matrix(max_n: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0..8i32, n * n)
            .prop_map(move |v| Array2::from_shape_vec((n, n), v.into_iter().map(f64::from).collect()).unwrap())
    })
}

fn simplex(k: usize) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(0.05..1.0f64, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        Array1::from_iter(w.into_iter().map(|v| v / s))
    })
}

fn random_perm(n: usize, seed: u64) -> Permutation {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut seeded_rng(seed));
    Permutation::new(v).unwrap()
}

// ---------------------------------------------------------------- measures

#[test]
fn noise_densities_integrate_to_one() {
    // d = 1: substitution z = ±e^u resolves the mixture's logarithmic peak at 0
    let models = [
        NoiseModel::gaussian(0.7).unwrap(),
        NoiseModel::laplace_1d(0.7).unwrap(),
        NoiseModel::gaussian_exp_mixture(0.7).unwrap(),
    ];
    let (lo, hi, m) = (-30.0f64, 4.0f64, 200_000);
    let h = (hi - lo) / m as f64;
    for model in &models {
        let mut total = 0.0;
        for k in 0..=m {
            let u = lo + h * k as f64;
            let z = u.exp();
            let w = if k == 0 || k == m { 0.5 } else { 1.0 };
            total += 2.0 * w * h * z * model.density(&[z]).unwrap();
        }
        assert!((total - 1.0).abs() < 1e-3, "{model:?} d = 1: {total}");
    }
    // d = 2 in polar coordinates with r = e^u
    for model in [&models[0], &models[2]] {
        let mut total = 0.0;
        for k in 0..=m {
            let r = (lo + h * k as f64).exp();
            let w = if k == 0 || k == m { 0.5 } else { 1.0 };
            total += w * h * 2.0 * std::f64::consts::PI * r * r * model.density(&[r, 0.0]).unwrap();
        }
        assert!((total - 1.0).abs() < 1e-3, "{model:?} d = 2: {total}");
    }
}

#[test]
fn noise_samples_have_zero_mean_and_stated_variance() {
    let draws = 100_000;
    let cases = [
        (NoiseModel::gaussian(2.0).unwrap(), 1),
        (NoiseModel::gaussian(2.0).unwrap(), 3),
        (NoiseModel::laplace_1d(1.5).unwrap(), 1),
        (NoiseModel::gaussian_exp_mixture(0.5).unwrap(), 2),
    ];
    for (k, (model, d)) in cases.iter().enumerate() {
        let s = sample_noise(model, draws, *d, 70 + k as u64).unwrap();
        let var: f64 = model.variance_per_coordinate();
        let sd = var.sqrt();
        for j in 0..*d {
            let col = s.column(j);
            let mean = col.sum() / draws as f64;
            assert!(mean.abs() <= 4.0 * sd / (draws as f64).sqrt(), "{model:?} coord {j}: mean {mean}");
            let v = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            assert!((v / var - 1.0).abs() < 0.05, "{model:?} coord {j}: variance {v} vs {var}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn radial_densities_ignore_rotations(r in 0.01..3.0f64, phi in 0.0..6.28f64, psi in 0.0..6.28f64) {
        for model in [NoiseModel::gaussian(0.8).unwrap(), NoiseModel::gaussian_exp_mixture(0.8).unwrap()] {
            let a = model.density(&[r, 0.0, 0.0]).unwrap();
            // rotation about the z axis, then about the x axis
            let p = [r * phi.cos(), r * phi.sin(), 0.0];
            let q = [p[0], p[1] * psi.cos(), p[1] * psi.sin()];
            let b = model.density(&q).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a, "{} vs {}", a, b);
        }
    }
}

// ---------------------------------------------------------------- assignment

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lap_matches_brute_force(c in cost_matrix(7)) {
        let fast = solve_lap(c.view()).unwrap();
        let slow = brute_force_lap(c.view()).unwrap();
        prop_assert_eq!(fast.objective, slow.objective);
        prop_assert_eq!(assignment_cost(c.view(), &fast.permutation), fast.objective);
    }

    #[test]
    fn lap_matches_brute_force_with_ties(c in int_cost_matrix(7)) {
        prop_assert_eq!(solve_lap(c.view()).unwrap().objective, brute_force_lap(c.view()).unwrap().objective);
    }

    #[test]
    fn row_permutation_equivariance(c in cost_matrix(8), seed in any::<u64>()) {
        let n = c.nrows();
        let rho = random_perm(n, seed);
        // permuted[i] = c[rho(i)]
        let permuted = Array2::from_shape_fn((n, n), |(i, j)| c[[rho[i], j]]);
        let a = solve_lap(c.view()).unwrap();
        let b = solve_lap(permuted.view()).unwrap();
        // continuous costs have a unique optimum almost surely
        prop_assert_eq!(b.permutation, a.permutation.compose(&rho).unwrap());
        let ci = c.mapv(|v| v.round());
        let pi = Array2::from_shape_fn((n, n), |(i, j)| ci[[rho[i], j]]);
        prop_assert_eq!(solve_lap(ci.view()).unwrap().objective, solve_lap(pi.view()).unwrap().objective);
    }

    #[test]
    fn scaled_hamming_is_a_pseudometric(n in 1usize..30, s in any::<[u64; 3]>()) {
        let (a, b, c) = (random_perm(n, s[0]), random_perm(n, s[1]), random_perm(n, s[2]));
        let d = |p: &Permutation, q: &Permutation| scaled_hamming(p, q).unwrap();
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b) == 0.0, a == b);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-15);
    }

    #[test]
    fn noiseless_recovery_attains_truth_objective(seed in 0u64..1000, d in 2usize..6) {
        for name in ["psd", "sep", "exp-norm"] {
            let mut spec = ScenarioSpec::named(name, 25, d, seed).unwrap();
            spec.noise_scale = 0.0;
            let ds = generate_dataset(&spec).unwrap();
            let c = recovery_cost(&ds.x, &ds.y).unwrap();
            let res = recover_permutation(&ds.x, &ds.y).unwrap();
            let truth = assignment_cost(c.view(), ds.pi_star.as_ref().unwrap());
            prop_assert!(res.objective <= truth);
            prop_assert!((res.objective - truth).abs() <= 1e-9 * (1.0 + truth.abs()));
        }
    }
}

#[test]
fn reversal_map_violates_cyclical_monotonicity() {
    let x = PointCloud::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
    let y = PointCloud::from_scalars(&[0.0, -1.0, -2.0]).unwrap();
    assert!(!cycle_report(&x, &y, 4).unwrap().is_monotone());
}

// ---------------------------------------------------------------- npmle

fn npmle_instance(seed: u64, d: usize, heavy: bool) -> (PointCloud<f64>, NoiseModel<f64>) {
    let name = if d == 1 { ["step2", "power", "linear1d"][(seed % 3) as usize] } else { "sphere" };
    let mut spec = ScenarioSpec::named(name, 80, d, seed).unwrap();
    if heavy {
        spec = spec.with_laplace_noise().unwrap();
    }
    let ds = generate_dataset(&spec).unwrap();
    (ds.y, spec.effective_noise().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn npmle_ascent_certificate_and_dominance(seed in 0u64..10_000, d in 1usize..3, heavy in any::<bool>(), em in any::<bool>()) {
        let (y, model) = npmle_instance(seed, d, heavy);
        let grid = build_grid(&y, GridPolicy::default_for(y.n(), d)).unwrap();
        let l = likelihood_matrix(&y, &grid, &model).unwrap();
        let opts = NpmleOptions {
            method: if em { NpmleMethod::Em } else { NpmleMethod::ConstrainedNewton },
            max_iter: if em { 5_000 } else { 50_000 },
            ..NpmleOptions::default()
        };
        let fit = solve_npmle_with(l.view(), &opts).unwrap();
        // non-increasing negative log-likelihood, up to summation rounding
        for w in fit.objective_trace.windows(2) {
            let allowance = 64.0 * f64::EPSILON * (1.0 + w[0].abs());
            prop_assert!(w[1] <= w[0] + allowance, "{} -> {}", w[0], w[1]);
        }
        let p = grid.n();
        let uniform = vec![1.0 / p as f64; p];
        // uniform weights can be optimal when every grid point explains only its own observation
        let lu = loglik(l.view(), &uniform);
        prop_assert!(fit.loglik >= lu - 64.0 * f64::EPSILON * (1.0 + lu.abs()), "fit {} uniform {}", fit.loglik, lu);
        if fit.converged {
            prop_assert!(fit.dual_max <= 1.0 + opts.tol);
            for (j, &w) in fit.weights.iter().enumerate() {
                if w > 1e-7 {
                    let dj: f64 = (0..y.n())
                        .map(|i| l[[i, j]] / (0..p).map(|k| l[[i, k]] * fit.weights[k]).sum::<f64>())
                        .sum::<f64>() / y.n() as f64;
                    prop_assert!(dj >= 1.0 - 10.0 * opts.tol, "D_{} = {}", j, dj);
                }
            }
        } else {
            prop_assert!(em, "the Newton solver must converge");
        }
    }
}

#[test]
fn npmle_mean_tracks_a_point_mass() {
    let (theta, sigma, n) = (2.5, 0.8, 400);
    let model = NoiseModel::gaussian(sigma).unwrap();
    for seed in 0..20 {
        let eps = sample_noise(&model, n, 1, seed).unwrap();
        let y = PointCloud::new(eps.points().mapv(|v| v + theta)).unwrap();
        let sol = fit_npmle(&y, &model, GridPolicy::DataPoints, &NpmleOptions::default()).unwrap();
        let mean: f64 = sol.fit.weights.iter().zip(sol.grid.as_slice()).map(|(w, t)| w * t).sum();
        assert!((mean - theta).abs() <= 3.0 * sigma / (n as f64).sqrt(), "seed {seed}: mean {mean}");
    }
}

// ---------------------------------------------------------------- transport

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_is_feasible_and_beats_heuristics(
        (n, p) in (1usize..9, 1usize..9),
        seed in any::<u64>(),
    ) {
        let mut rng = seeded_rng(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let t: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let raw = |k: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            Array1::from_iter(w.into_iter().map(|v| v / s))
        };
        let (a, b) = (raw(n, &mut rng), raw(p, &mut rng));
        let cost = Array2::from_shape_fn((n, p), |(i, j)| 0.5 * (x[i] - t[j]).powi(2));
        let lp = solve_kantorovich(cost.view(), a.view(), b.view()).unwrap();
        prop_assert!(lp.coupling.row_residual() <= 1e-8 && lp.coupling.col_residual() <= 1e-8);
        prop_assert!(lp.coupling.mass().iter().all(|&m| m >= 0.0));
        let nwc = monotone_coupling_1d(&x, a.view(), &t, b.view()).unwrap();
        let nwc_cost = nwc.coupling.cost(cost.view());
        prop_assert!((nwc_cost - lp.objective).abs() <= 1e-9);
        let product: f64 = (0..n).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| a[i] * b[j] * cost[[i, j]]).sum();
        prop_assert!(lp.objective <= product + 1e-12);
    }

    #[test]
    fn sinkhorn_meets_its_tolerance(n in 2usize..12, seed in any::<u64>(), w in simplex(6)) {
        let mut rng = seeded_rng(seed);
        let cost = Array2::from_shape_fn((n, 6), |_| rng.random_range(0.0..4.0));
        let a = Array1::from_elem(n, 1.0 / n as f64);
        let plan = sinkhorn(cost.view(), a.view(), w.view(), 0.05, 10_000, 1e-7).unwrap();
        if plan.converged {
            let c = &plan.coupling;
            let l1: f64 = (c.row_sums() - &a).iter().map(|v| v.abs()).sum();
            prop_assert!(l1 <= 1e-7 + 1e-12, "row L1 residual {}", l1);
            prop_assert!(c.col_residual() <= 1e-12);
        }
    }

    #[test]
    fn barycentric_projection_contracts(n in 1usize..10, p in 1usize..10, d in 1usize..4, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let x = PointCloud::from_flat(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let th = PointCloud::from_flat(p, d, (0..p * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let b = {
            let w: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            Array1::from_iter(w.into_iter().map(|v| v / s))
        };
        let a = Array1::from_elem(n, 1.0 / n as f64);
        let cost = half_squared_cost(&x, &th).unwrap();
        let plan = solve_kantorovich(cost.view(), a.view(), b.view()).unwrap();
        let proj = barycentric_projection(&plan, &th).unwrap();
        prop_assert!(barycentric_contraction(&plan, &x, &th, &proj).unwrap().holds);
    }
}

// ---------------------------------------------------------------- denoise

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pipeline_conservation_and_exchangeability(seed in 0u64..10_000, d in 1usize..3, shift in 1usize..40) {
        let name = if d == 1 { "step3" } else { "cluster" };
        let spec = ScenarioSpec::named(name, 60, d, seed).unwrap();
        let ds = generate_dataset(&spec).unwrap();
        let cfg = DenoiseConfig::new(spec.effective_noise().unwrap());
        let r = denoise_permuted(&ds.x, &ds.y, &cfg).unwrap();
        prop_assert!((r.plan.coupling.total_mass() - 1.0).abs() <= 1e-12);
        prop_assert!(r.contraction.holds);
        let (lo, hi) = r.nu_hat.atoms().bounds();
        for row in r.fhat.rows() {
            for j in 0..d {
                prop_assert!(row[j].is_finite());
                prop_assert!(row[j] >= lo[j] - 1e-12 * (1.0 + lo[j].abs()) && row[j] <= hi[j] + 1e-12 * (1.0 + hi[j].abs()));
            }
        }
        let rotated: Vec<usize> = (0..60).map(|i| (i + shift) % 60).collect();
        let r2 = denoise_unlinked(&ds.x, &ds.y.select(&rotated), &cfg).unwrap();
        for (a, b) in r.fhat.as_slice().iter().zip(r2.fhat.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        prop_assert_eq!(r.nu_hat.len(), r2.nu_hat.len());
    }
}

// ---------------------------------------------------------------- simulate

#[test]
fn shipped_functions_are_gradients() {
    let mut rng = seeded_rng(77);
    let strict = [
        (FStarKind::Psd, 3),
        (FStarKind::Sep1p5Sqrt, 3),
        (FStarKind::ExpNorm, 3),
        (FStarKind::Linear1D, 1),
        (FStarKind::Power, 1),
        (FStarKind::SeparableSqrt, 2),
        (FStarKind::Radial, 2),
        (FStarKind::LinearK(2), 2),
    ];
    for (kind, d) in strict {
        let f = kind.instantiate(d, &mut rng).unwrap();
        let rep = fstar_is_gradient_check(&f, d, 10, 5).unwrap();
        assert!(rep.is_strictly_monotone(), "{kind:?}: {rep:?}");
    }
    // flat pieces or homogeneity allow zero-slack cycles
    let weak = [
        (FStarKind::Cluster(5), 2),
        (FStarKind::Sphere, 2),
        (FStarKind::Constant1D, 1),
        (FStarKind::Step2, 1),
        (FStarKind::Step3, 1),
        (FStarKind::LinearK(1), 3),
    ];
    for (kind, d) in weak {
        let f = kind.instantiate(d, &mut rng).unwrap();
        let rep = fstar_is_gradient_check(&f, d, 10, 5).unwrap();
        assert!(rep.is_monotone(), "{kind:?}: {rep:?}");
    }
}

#[test]
fn wishart_matrices_have_unit_mean_eigenvalues() {
    use nalgebra::{DMatrix, SymmetricEigen};
    let d = 30;
    for seed in 0..20 {
        let FStarSpec::Psd { b, .. } = FStarSpec::random_psd(d, &mut seeded_rng(seed)) else { unreachable!() };
        let ev = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &b)).eigenvalues;
        let mean = ev.sum() / d as f64;
        assert!((0.8..=1.2).contains(&mean), "seed {seed}: {mean}");
        assert!(ev.min() >= -1e-10);
    }
}

#[test]
fn responses_realign_with_truth() {
    let spec = ScenarioSpec::named("psd", 10_000, 2, 4).unwrap();
    let ds = generate_dataset(&spec).unwrap();
    let inv = ds.pi_star.as_ref().unwrap().inverse();
    let aligned = ds.y.select(inv.as_slice());
    let sd = spec.noise_scale;
    for j in 0..2 {
        let mean = (0..10_000).map(|i| aligned.row(i)[j] - ds.truth.row(i)[j]).sum::<f64>() / 10_000.0;
        assert!(mean.abs() <= 4.0 * sd / 100.0, "coordinate {j}: {mean}");
    }
}

#[test]
fn ball_design_is_centered() {
    for d in [2, 4] {
        let x = Design::UniformBall.sample(20_000, d, &mut seeded_rng(d as u64)).unwrap();
        assert!(x.rows().all(|r| r.iter().map(|v| v * v).sum::<f64>() <= 1.0));
        // coordinate variance of the uniform ball is 1/(d + 2)
        let se = (1.0 / (d as f64 + 2.0) / 20_000.0).sqrt();
        for m in x.mean() {
            assert!(m.abs() <= 4.0 * se);
        }
    }
}

// ---------------------------------------------------------------- experiments

fn record(value: f64, n: usize) -> ReplicationRecord {
    ReplicationRecord {
        scenario: "s".into(),
        seed: 0,
        n,
        d: 1,
        rep: 0,
        metric: Metric::Mse,
        value,
        runtime_ms: 0,
        certificate_ok: None,
        contraction_ok: None,
        marginal_residual: None,
        transport_exact: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn summary_matches_sort_oracle(values in prop::collection::vec(-100.0..100.0f64, 1..40)) {
        let mut s = values.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // type 7 quantile written out from the definition
        let q = |p: f64| {
            let h = (s.len() - 1) as f64 * p;
            let (f, c) = (h.floor() as usize, h.ceil() as usize);
            s[f] + (h - f as f64) * (s[c] - s[f])
        };
        let st = stats(&values).unwrap();
        prop_assert_eq!(st.median, q(0.5));
        prop_assert_eq!(st.q25, q(0.25));
        prop_assert_eq!(st.q75, q(0.75));
        prop_assert_eq!(quantile(&s, 1.0), s[s.len() - 1]);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((st.mean - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
        let recs: Vec<ReplicationRecord> = values.iter().map(|&v| record(v, 7)).collect();
        let groups = summarize(&recs).unwrap();
        prop_assert_eq!(groups.len(), 1);
        prop_assert_eq!(groups[0].1, st);
    }
}
