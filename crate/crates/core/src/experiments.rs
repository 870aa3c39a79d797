//! Seeded replication harness: permutation recovery and denoising experiments, their
//! metrics, group summaries and the results CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::assignment::{recover_permutation, scaled_hamming};
use crate::denoise::{denoise_permuted, risk_certificate, DenoiseConfig, TransportMethod};
use crate::measures::{squared_distance, PointCloud};
use crate::simulate::{generate_dataset, ScenarioSpec};
use crate::{Error, Result};

/// Exact header of the results CSV.
pub const RESULTS_HEADER: [&str; 8] = ["scenario", "seed", "n", "d", "metric", "value", "runtime_ms", "certificate_ok"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    ScaledHamming,
    Mse,
    NormalizedMse,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ScaledHamming => "scaled_hamming",
            Self::Mse => "mse",
            Self::NormalizedMse => "normalized_mse",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub scenario: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub rep: usize,
    pub metric: Metric,
    pub value: f64,
    /// Zero unless timings were requested, so that reruns are byte-identical.
    pub runtime_ms: u64,
    /// Risk certificate outcome, for denoising runs with known convexity constants.
    pub certificate_ok: Option<bool>,
    /// Barycentric contraction check, for denoising runs.
    pub contraction_ok: Option<bool>,
    /// Largest deviation of the coupling's row and column sums from the prescribed marginals.
    pub marginal_residual: Option<f64>,
    /// `false` when the size guard forced an entropic plan.
    pub transport_exact: bool,
}

/// Replication seed: the base seed mixed with the FNV-1a hash of the scenario label and
/// then with `n`, `d` and the replication index, one SplitMix64 round per field.
pub fn replication_seed(base: u64, scenario: &str, n: usize, d: usize, rep: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in scenario.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut s = splitmix64(base ^ h);
    for v in [n as u64, d as u64, rep as u64] {
        s = splitmix64(s ^ v);
    }
    s
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `(1/(nσ²)) Σ_i ‖f̂_i − truth_i‖²`.
pub fn normalized_mse(fhat: &PointCloud<f64>, truth: &PointCloud<f64>, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok(mse(fhat, truth)? / (sigma * sigma))
}

/// `(1/n) Σ_i ‖f̂_i − truth_i‖²`.
pub fn mse(fhat: &PointCloud<f64>, truth: &PointCloud<f64>) -> Result<f64> {
    if fhat.n() != truth.n() || fhat.d() != truth.d() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} estimate against {}x{} truth",
            fhat.n(),
            fhat.d(),
            truth.n(),
            truth.d()
        )));
    }
    let s: f64 = fhat.rows().zip(truth.rows()).map(|(a, b)| squared_distance(a, b)).sum();
    Ok(s / fhat.n() as f64)
}

/// Knobs shared by the runners.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Record wall-clock time per replication.
    pub timings: bool,
    /// Replaces the scenario's noise scale.
    pub noise_scale: Option<f64>,
    /// Use the heavy-tailed noise law of the scenario.
    pub heavy_tailed: bool,
}

fn sort_records(records: &mut [ReplicationRecord]) {
    records.sort_by_key(|r| (r.n, r.d, r.rep));
}

fn elapsed_ms(start: Instant, on: bool) -> u64 {
    if on {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

fn scenario_for(name: &str, n: usize, d: usize, seed: u64, opts: &RunOptions) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::named(name, n, d, seed)?;
    if opts.heavy_tailed {
        spec = spec.with_laplace_noise()?;
    }
    if let Some(s) = opts.noise_scale {
        spec.noise_scale = s;
    }
    Ok(spec)
}

fn label(name: &str, opts: &RunOptions) -> String {
    if opts.heavy_tailed {
        format!("{name}-heavy")
    } else {
        name.to_string()
    }
}

/// For every `d` and replication: draw a dataset with a random `π*`, solve the assignment
/// problem and record the scaled Hamming distance. Replications run on the current rayon
/// pool; records come back ordered by `(n, d, rep)`.
pub fn run_recovery_experiment(
    setting: &str,
    n: usize,
    ds: &[usize],
    reps: usize,
    base_seed: u64,
    opts: &RunOptions,
) -> Result<Vec<ReplicationRecord>> {
    if !["psd", "sep", "exp-norm"].contains(&setting) {
        return Err(Error::InvalidParameter(format!(
            "recovery settings are psd, sep and exp-norm, got `{setting}`"
        )));
    }
    if reps == 0 || n == 0 || ds.is_empty() {
        return Err(Error::InvalidParameter("need reps >= 1, n >= 1 and at least one d".into()));
    }
    let name = label(setting, opts);
    let tasks: Vec<(usize, usize)> = ds.iter().flat_map(|&d| (0..reps).map(move |r| (d, r))).collect();
    let mut records = tasks
        .par_iter()
        .map(|&(d, rep)| {
            let seed = replication_seed(base_seed, &name, n, d, rep);
            let start = Instant::now();
            let mut spec = scenario_for(setting, n, d, seed, opts)?;
            spec.shuffle = true;
            let ds = generate_dataset(&spec)?;
            let pi_hat = recover_permutation(&ds.x, &ds.y)?.permutation;
            let value = scaled_hamming(&pi_hat, ds.pi_star.as_ref().expect("linked mode"))?;
            Ok(ReplicationRecord {
                scenario: name.clone(),
                seed,
                n,
                d,
                rep,
                metric: Metric::ScaledHamming,
                value,
                runtime_ms: elapsed_ms(start, opts.timings),
                certificate_ok: None,
                contraction_ok: None,
                marginal_residual: None,
                transport_exact: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_records(&mut records);
    Ok(records)
}

/// For every `n` and replication: draw a dataset with identity `π*`, denoise and record the
/// MSE (`d = 1`) or normalized MSE (`d > 1`), plus the risk certificate when the scenario's
/// convexity constants are known.
///
/// The noise law handed to the pipeline is the scenario's own. If the exact plan is
/// rejected by the size guard, the plan is recomputed with Sinkhorn at `ε = 10⁻³ · max C`
/// and the record is flagged.
pub fn run_denoise_experiment(
    scenario: &str,
    d: usize,
    ns: &[usize],
    reps: usize,
    base_seed: u64,
    cfg_template: &DenoiseConfig<f64>,
    opts: &RunOptions,
) -> Result<Vec<ReplicationRecord>> {
    if reps == 0 || ns.is_empty() {
        return Err(Error::InvalidParameter("need reps >= 1 and at least one n".into()));
    }
    let name = label(scenario, opts);
    let tasks: Vec<(usize, usize)> = ns.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
    let mut records = tasks
        .par_iter()
        .map(|&(n, rep)| {
            let seed = replication_seed(base_seed, &name, n, d, rep);
            let start = Instant::now();
            let mut spec = scenario_for(scenario, n, d, seed, opts)?;
            spec.shuffle = false;
            let ds = generate_dataset(&spec)?;
            let mut cfg = cfg_template.clone();
            cfg.noise = spec.effective_noise()?;
            let (result, exact) = match denoise_permuted(&ds.x, &ds.y, &cfg) {
                Err(Error::SizeGuard { .. }) => {
                    cfg.transport = TransportMethod::Sinkhorn {
                        epsilon: 1e-3 * max_half_sq_cost(&ds.x, &ds.y),
                    };
                    (denoise_permuted(&ds.x, &ds.y, &cfg)?, false)
                }
                other => (other?, cfg.transport == TransportMethod::ExactLp),
            };
            let (metric, value) = if d == 1 {
                (Metric::Mse, mse(&result.fhat, &ds.truth)?)
            } else {
                (Metric::NormalizedMse, normalized_mse(&result.fhat, &ds.truth, spec.noise_scale)?)
            };
            let certificate_ok = match ds.fstar.convexity_constants() {
                Some((lam, big_l)) if exact => Some(risk_certificate(&result, &ds.truth, lam, big_l)?.holds),
                _ => None,
            };
            let coupling = &result.plan.coupling;
            Ok(ReplicationRecord {
                scenario: name.clone(),
                seed,
                n,
                d,
                rep,
                metric,
                value,
                runtime_ms: elapsed_ms(start, opts.timings),
                certificate_ok,
                contraction_ok: Some(result.contraction.holds),
                marginal_residual: Some(coupling.row_residual().max(coupling.col_residual())),
                transport_exact: exact,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_records(&mut records);
    Ok(records)
}

/// Upper bound on `½‖x − θ‖²` over the bounding box of both clouds.
fn max_half_sq_cost(x: &PointCloud<f64>, y: &PointCloud<f64>) -> f64 {
    let (lx, hx) = x.bounds();
    let (ly, hy) = y.bounds();
    let diag: f64 = (0..x.d())
        .map(|j| {
            let span = hx[j].max(hy[j]) - lx[j].min(ly[j]);
            span * span
        })
        .sum();
    (0.5 * diag).max(f64::MIN_POSITIVE)
}

/// Boxplot statistics of one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub count: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub mean: f64,
    /// Sample standard deviation over `√count`; zero for a single value.
    pub stderr: f64,
}

/// Quantile with linear interpolation between order statistics, position `(N − 1) q`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn stats(values: &[f64]) -> Result<Stats> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("cannot summarize an empty group".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("summary input".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let count = s.len();
    let mean = s.iter().sum::<f64>() / count as f64;
    let stderr = if count > 1 {
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64;
        (var / count as f64).sqrt()
    } else {
        0.0
    };
    Ok(Stats {
        count,
        median: quantile(&s, 0.5),
        q25: quantile(&s, 0.25),
        q75: quantile(&s, 0.75),
        mean,
        stderr,
    })
}

/// Group key of [`summarize`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub scenario: String,
    pub metric: Metric,
    pub n: usize,
    pub d: usize,
}

/// Statistics per `(scenario, metric, n, d)`, in key order.
pub fn summarize(records: &[ReplicationRecord]) -> Result<Vec<(GroupKey, Stats)>> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = GroupKey {
            scenario: r.scenario.clone(),
            metric: r.metric,
            n: r.n,
            d: r.d,
        };
        groups.entry(key).or_default().push(r.value);
    }
    groups.into_iter().map(|(k, v)| Ok((k, stats(&v)?))).collect()
}

/// Writes the results CSV. Values use the shortest representation that reads back exactly.
pub fn write_records_csv<W: Write>(records: &[ReplicationRecord], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    out.write_record(RESULTS_HEADER).map_err(io)?;
    for r in records {
        let cert = r.certificate_ok.map_or(String::new(), |b| b.to_string());
        out.write_record([
            r.scenario.clone(),
            r.seed.to_string(),
            r.n.to_string(),
            r.d.to_string(),
            r.metric.to_string(),
            format!("{:?}", r.value),
            r.runtime_ms.to_string(),
            cert,
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Problem sizes of a named experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Reduced sizes that finish in minutes.
    Desk,
    /// Full replication counts and sample sizes (hours).
    Full,
}

/// A fully specified experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentPlan {
    Recovery {
        setting: &'static str,
        n: usize,
        ds: Vec<usize>,
        reps: usize,
    },
    Denoise {
        scenario: String,
        ds: Vec<usize>,
        ns: Vec<usize>,
        reps: usize,
        heavy_tailed: bool,
    },
}

const DENOISE_1D: [&str; 5] = ["constant1d", "linear1d", "step2", "step3", "power"];
const DENOISE_MULTI: [&str; 5] = ["cluster", "linear-k", "separable", "sphere", "radial"];

/// Experiment names accepted by [`ExperimentPlan::named`].
pub fn experiment_names() -> Vec<String> {
    let mut out: Vec<String> = ["recovery-psd", "recovery-sep", "recovery-expnorm"].map(String::from).to_vec();
    for f in DENOISE_1D {
        out.push(format!("denoise1d-{f}"));
        out.push(format!("denoise1d-{f}-laplace"));
    }
    for f in DENOISE_MULTI {
        out.push(format!("denoise-{f}"));
        out.push(format!("denoise-{f}-mixture"));
    }
    out
}

impl ExperimentPlan {
    /// Recovery: `n = 200` and 20 replications at desk scale, `n = 1000` and 100 at full
    /// scale, `d = 10, 20, …, 70`. One-dimensional denoising: `n ∈ {100, 1000}`.
    /// Multivariate denoising: `d ∈ {2, 4}` and `n = 256, 512, 1024` (desk) or
    /// `2⁸, …, 2¹²` (full). Suffixes `-laplace` and `-mixture` select heavy-tailed noise.
    pub fn named(name: &str, scale: Scale) -> Result<Self> {
        let reps = match scale {
            Scale::Desk => 20,
            Scale::Full => 100,
        };
        let unknown = || {
            Error::InvalidParameter(format!(
                "unknown experiment `{name}`; expected one of {}",
                experiment_names().join(", ")
            ))
        };
        if let Some(s) = name.strip_prefix("recovery-") {
            let setting = match s {
                "psd" => "psd",
                "sep" => "sep",
                "expnorm" | "exp-norm" => "exp-norm",
                _ => return Err(unknown()),
            };
            let n = if scale == Scale::Desk { 200 } else { 1000 };
            return Ok(Self::Recovery {
                setting,
                n,
                ds: (1..=7).map(|k| 10 * k).collect(),
                reps,
            });
        }
        if let Some(s) = name.strip_prefix("denoise1d-") {
            let (f, heavy) = s.strip_suffix("-laplace").map_or((s, false), |f| (f, true));
            if !DENOISE_1D.contains(&f) {
                return Err(unknown());
            }
            return Ok(Self::Denoise {
                scenario: f.to_string(),
                ds: vec![1],
                ns: vec![100, 1000],
                reps,
                heavy_tailed: heavy,
            });
        }
        if let Some(s) = name.strip_prefix("denoise-") {
            let (f, heavy) = s.strip_suffix("-mixture").map_or((s, false), |f| (f, true));
            if !DENOISE_MULTI.contains(&f) {
                return Err(unknown());
            }
            let ns = match scale {
                Scale::Desk => vec![256, 512, 1024],
                Scale::Full => (8..=12).map(|k| 1usize << k).collect(),
            };
            return Ok(Self::Denoise {
                scenario: f.to_string(),
                ds: vec![2, 4],
                ns,
                reps,
                heavy_tailed: heavy,
            });
        }
        Err(unknown())
    }

    /// Replaces the replication count.
    pub fn with_reps(mut self, r: usize) -> Self {
        match &mut self {
            Self::Recovery { reps, .. } | Self::Denoise { reps, .. } => *reps = r,
        }
        self
    }

    /// Runs every configuration with default pipeline settings.
    pub fn run(&self, base_seed: u64, timings: bool) -> Result<Vec<ReplicationRecord>> {
        match self {
            Self::Recovery { setting, n, ds, reps } => {
                let opts = RunOptions {
                    timings,
                    ..RunOptions::default()
                };
                run_recovery_experiment(setting, *n, ds, *reps, base_seed, &opts)
            }
            Self::Denoise {
                scenario,
                ds,
                ns,
                reps,
                heavy_tailed,
            } => {
                let opts = RunOptions {
                    timings,
                    heavy_tailed: *heavy_tailed,
                    ..RunOptions::default()
                };
                let mut out = Vec::new();
                for &d in ds {
                    // placeholder noise; each replication installs the scenario's own
                    let cfg = DenoiseConfig::new(crate::measures::NoiseModel::gaussian(1.0)?);
                    out.extend(run_denoise_experiment(scenario, d, ns, *reps, base_seed, &cfg, &opts)?);
                }
                sort_records(&mut out);
                Ok(out)
            }
        }
    }
}
