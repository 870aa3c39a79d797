//! Command line front end: simulation, NPMLE, denoising, permutation recovery and the
//! replication experiments.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 for numerical failures
//! (solver non-convergence, fatal only under `--strict`).

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::json;

use unlinked::assignment::recover_permutation;
use unlinked::denoise::{denoise_permuted, denoise_unlinked, risk_certificate, DenoiseConfig, TransportMethod};
use unlinked::experiments::{summarize, write_records_csv, ExperimentPlan, Scale};
use unlinked::io;
use unlinked::measures::{NoiseModel, PointCloud};
use unlinked::npmle::{fit_npmle, prune_to_measure, GridPolicy, NpmleOptions};
use unlinked::simulate::{generate_dataset, FStarKind, ScenarioSpec};

#[derive(Parser, Debug)]
#[command(name = "unlinked", version, about = "Permuted and unlinked monotone regression")]
struct Cli {
    /// File of `key=value` lines supplying flag defaults; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = positive_usize)]
    jobs: Option<usize>,
    /// Treat solver non-convergence as fatal (exit code 2).
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset from a named scenario.
    Simulate(SimulateArgs),
    /// Fit the mixing measure of noisy observations.
    Npmle(NpmleArgs),
    /// Estimate f*(X_i) from design points and responses.
    Denoise(DenoiseArgs),
    /// Estimate the permutation matching responses to design points.
    Recover(RecoverArgs),
    /// Run a named replication experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, value_parser = positive_usize)]
    n: usize,
    #[arg(long, value_parser = positive_usize)]
    d: usize,
    /// Number of responses at fresh design points (unlinked mode).
    #[arg(long, value_parser = positive_usize)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prefix of the output files `X.csv`, `Y.csv`, `truth.csv`, `pi.csv`.
    #[arg(long)]
    out_prefix: String,
    /// Overrides the scenario's noise scale.
    #[arg(long, value_parser = nonnegative_f64)]
    noise_scale: Option<f64>,
    /// Laplace noise for d = 1, the Gaussian scale mixture otherwise.
    #[arg(long)]
    heavy_tailed: bool,
    /// Number of directions for `linear-k` (default d).
    #[arg(long, value_parser = positive_usize)]
    k: Option<usize>,
    /// Shuffle responses (default: on for recovery scenarios).
    #[arg(long)]
    shuffle: Option<bool>,
}

#[derive(Args, Debug, Clone)]
struct NoiseArgs {
    #[arg(long, value_parser = positive_f64)]
    sigma: f64,
    /// gaussian, laplace1d or laplace-mix.
    #[arg(long, default_value = "gaussian")]
    noise: String,
    /// `data` or `linspace:K` (default: linspace with 2⌈√n⌉ points for d = 1, data otherwise).
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, value_parser = positive_f64, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, value_parser = positive_usize, default_value_t = 50_000)]
    max_iter: usize,
    #[arg(long, value_parser = positive_f64, default_value_t = 1e-8)]
    prune: f64,
}

#[derive(Args, Debug)]
struct NpmleArgs {
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Output measure CSV.
    #[arg(long)]
    out: PathBuf,
    /// Certificate JSON; printed to standard output when absent.
    #[arg(long)]
    cert: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Allow a different number of responses than design points.
    #[arg(long)]
    unlinked: bool,
    /// Entropic transport with this regularization instead of the exact plan.
    #[arg(long, value_parser = positive_f64)]
    sinkhorn: Option<f64>,
    /// f*(X_i) for the risk certificate.
    #[arg(long, requires_all = ["lambda", "smooth"])]
    truth: Option<PathBuf>,
    #[arg(long, value_parser = positive_f64)]
    lambda: Option<f64>,
    #[arg(long, value_parser = positive_f64)]
    smooth: Option<f64>,
    /// Directory receiving fhat.csv, nu_hat.csv, plan.csv and certificate.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct RecoverArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    name: String,
    #[arg(long, value_parser = positive_usize)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Full replication counts and sample sizes (multi-hour runs).
    #[arg(long = "paper-scale")]
    full_scale: bool,
    /// Fill the runtime_ms column (makes the output machine dependent).
    #[arg(long)]
    timings: bool,
    #[arg(long)]
    out: PathBuf,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

fn nonnegative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a nonnegative number, got `{s}`")),
    }
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("expected a positive integer, got `{s}`")),
    }
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let numerical = matches!(
            error.downcast_ref::<unlinked::Error>(),
            Some(unlinked::Error::NotConverged { .. })
        );
        Self {
            code: if numerical { 2 } else { 1 },
            error,
        }
    }
}

impl From<unlinked::Error> for Failure {
    fn from(e: unlinked::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn numerical(msg: String) -> Failure {
    Failure {
        code: 2,
        error: anyhow!(msg),
    }
}

/// Splices `--key value` pairs from the config file into `argv` right after the
/// subcommand, skipping keys already given on the command line.
fn apply_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let path = strs.iter().enumerate().find_map(|(i, a)| {
        a.strip_prefix("--config=")
            .map(str::to_string)
            .or_else(|| (a == "--config").then(|| strs.get(i + 1).cloned()).flatten())
    });
    let Some(path) = path else { return Ok(argv) };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let cmd = Cli::command();
    let sub_pos = strs
        .iter()
        .position(|a| cmd.find_subcommand(a).is_some())
        .ok_or_else(|| anyhow!("--config needs a subcommand"))?;
    let sub = cmd.find_subcommand(&strs[sub_pos]).expect("found above");
    let given: HashSet<String> = strs
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut extra: Vec<OsString> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value", k + 1))?;
        let (key, value) = (key.trim().replace('_', "-"), value.trim());
        if given.contains(&key) {
            continue;
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| anyhow!("config line {}: unknown key `{key}`", k + 1))?;
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}").into());
            extra.push(value.into());
        } else {
            match value {
                "true" => extra.push(format!("--{key}").into()),
                "false" => {}
                _ => bail!("config line {}: `{key}` expects true or false", k + 1),
            }
        }
    }
    let mut out = argv;
    out.splice(sub_pos + 1..sub_pos + 1, extra);
    Ok(out)
}

/// Writes through a temporary file in the destination directory, then renames.
fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_cloud(path: &Path) -> anyhow::Result<PointCloud<f64>> {
    io::read_point_cloud(path).with_context(|| format!("reading {}", path.display()))
}

fn noise_model(args: &NoiseArgs, d: usize) -> anyhow::Result<NoiseModel<f64>> {
    let m = match args.noise.as_str() {
        "gaussian" => NoiseModel::gaussian(args.sigma)?,
        "laplace1d" => NoiseModel::laplace_1d(args.sigma)?,
        "laplace-mix" => NoiseModel::gaussian_exp_mixture(args.sigma)?,
        other => bail!("unknown noise `{other}`; expected gaussian, laplace1d or laplace-mix"),
    };
    m.check(d)?;
    Ok(m)
}

fn grid_policy(spec: Option<&str>) -> anyhow::Result<Option<GridPolicy>> {
    match spec {
        None => Ok(None),
        Some("data") => Ok(Some(GridPolicy::DataPoints)),
        Some(s) => {
            let k = s
                .strip_prefix("linspace:")
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(|| anyhow!("grid must be `data` or `linspace:K`, got `{s}`"))?;
            Ok(Some(GridPolicy::Linspace1D(k)))
        }
    }
}

fn main() -> ExitCode {
    let argv = match apply_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::command().try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.jobs {
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(anyhow!(e).into()),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Npmle(a) => npmle(a, cli.strict),
        Command::Denoise(a) => denoise(a, cli.strict),
        Command::Recover(a) => recover(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let mut spec = ScenarioSpec::named(&a.scenario, a.n, a.d, a.seed)?;
    if a.heavy_tailed {
        spec = spec.with_laplace_noise()?;
    }
    if let Some(s) = a.noise_scale {
        spec.noise_scale = s;
    }
    if let Some(k) = a.k {
        if spec.fstar != FStarKind::LinearK(a.d) {
            return Err(anyhow!("--k applies to the linear-k scenario only").into());
        }
        spec.fstar = FStarKind::LinearK(k);
    }
    if let Some(s) = a.shuffle {
        spec.shuffle = s;
    }
    spec.m = a.m;
    let ds = generate_dataset(&spec)?;
    let path = |name: &str| PathBuf::from(format!("{}{name}", a.out_prefix));
    write_atomic(&path("X.csv"), |w| Ok(io::write_point_cloud(&ds.x, w)?))?;
    write_atomic(&path("Y.csv"), |w| Ok(io::write_point_cloud(&ds.y, w)?))?;
    write_atomic(&path("truth.csv"), |w| Ok(io::write_point_cloud(&ds.truth, w)?))?;
    if let Some(pi) = &ds.pi_star {
        write_atomic(&path("pi.csv"), |w| Ok(io::write_permutation(pi, w)?))?;
    }
    println!(
        "{}: n = {}, m = {}, d = {}, noise scale {}",
        a.scenario,
        ds.x.n(),
        ds.y.n(),
        a.d,
        spec.noise_scale
    );
    Ok(())
}

fn npmle(a: &NpmleArgs, strict: bool) -> Result<(), Failure> {
    let y = read_cloud(&a.y)?;
    let model = noise_model(&a.noise, y.d())?;
    let policy = grid_policy(a.noise.grid.as_deref())?.unwrap_or_else(|| GridPolicy::default_for(y.n(), y.d()));
    let opts = NpmleOptions {
        tol: a.noise.tol,
        max_iter: a.noise.max_iter,
        ..NpmleOptions::default()
    };
    let sol = fit_npmle(&y, &model, policy, &opts)?;
    if strict && !sol.fit.converged {
        return Err(numerical(format!(
            "NPMLE did not converge in {} iterations (max D = {:e})",
            sol.fit.iterations, sol.fit.dual_max
        )));
    }
    let measure = prune_to_measure(&sol, a.noise.prune)?;
    write_atomic(&a.out, |w| Ok(io::write_measure(&measure, w)?))?;
    let cert = json!({
        "loglik": sol.fit.loglik,
        "dual_max": sol.fit.dual_max,
        "iterations": sol.fit.iterations,
        "converged": sol.fit.converged,
    });
    match &a.cert {
        Some(p) => write_atomic(p, |w| Ok(writeln!(w, "{cert}")?))?,
        None => println!("{cert}"),
    }
    Ok(())
}

fn denoise(a: &DenoiseArgs, strict: bool) -> Result<(), Failure> {
    let x = read_cloud(&a.x)?;
    let y = read_cloud(&a.y)?;
    if x.d() != y.d() {
        return Err(anyhow!(
            "dimension mismatch at {} (d = {}) and {} (d = {})",
            a.x.display(),
            x.d(),
            a.y.display(),
            y.d()
        )
        .into());
    }
    if !a.unlinked && x.n() != y.n() {
        return Err(anyhow!(
            "{} has {} rows but {} has {}; pass --unlinked for unequal sample sizes",
            a.x.display(),
            x.n(),
            a.y.display(),
            y.n()
        )
        .into());
    }
    let mut cfg = DenoiseConfig::new(noise_model(&a.noise, x.d())?);
    cfg.grid = grid_policy(a.noise.grid.as_deref())?;
    cfg.npmle_tol = a.noise.tol;
    cfg.npmle_max_iter = a.noise.max_iter;
    cfg.prune_threshold = a.noise.prune;
    if let Some(eps) = a.sinkhorn {
        cfg.transport = TransportMethod::Sinkhorn { epsilon: eps };
    }
    let result = if a.unlinked {
        denoise_unlinked(&x, &y, &cfg)?
    } else {
        denoise_permuted(&x, &y, &cfg)?
    };
    if strict && !result.npmle.fit.converged {
        return Err(numerical(format!("NPMLE did not converge in {} iterations", result.npmle.fit.iterations)));
    }
    if strict && !result.plan.converged {
        return Err(numerical(format!("Sinkhorn did not converge in {} sweeps", result.plan.iterations)));
    }
    let certificate = match (&a.truth, a.lambda, a.smooth) {
        (Some(t), Some(lam), Some(l)) => {
            let truth = read_cloud(t)?;
            Some(risk_certificate(&result, &truth, lam, l)?)
        }
        _ => None,
    };
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = |f: &str| a.out_dir.join(f);
    write_atomic(&out("fhat.csv"), |w| Ok(io::write_point_cloud(&result.fhat, w)?))?;
    write_atomic(&out("nu_hat.csv"), |w| Ok(io::write_measure(&result.nu_hat, w)?))?;
    write_atomic(&out("plan.csv"), |w| Ok(io::write_coupling(&result.plan.coupling, w)?))?;
    println!(
        "denoised {} points with {} atoms (NPMLE {} iterations, transport objective {:e})",
        x.n(),
        result.nu_hat.len(),
        result.npmle.fit.iterations,
        result.plan.objective
    );
    if let Some(c) = certificate {
        let doc = json!({
            "mse": c.mse,
            "w2_sq": c.w2_sq,
            "bound": c.bound,
            "holds": c.holds,
            "lambda": a.lambda,
            "smooth": a.smooth,
        });
        write_atomic(&out("certificate.json"), |w| Ok(writeln!(w, "{doc}")?))?;
        println!("certificate: mse {:e} <= bound {:e}: {}", c.mse, c.bound, c.holds);
    }
    Ok(())
}

fn recover(a: &RecoverArgs) -> Result<(), Failure> {
    let x = read_cloud(&a.x)?;
    let y = read_cloud(&a.y)?;
    if x.d() != y.d() || x.n() != y.n() {
        return Err(anyhow!(
            "shape mismatch at {} ({}x{}) and {} ({}x{})",
            a.x.display(),
            x.n(),
            x.d(),
            a.y.display(),
            y.n(),
            y.d()
        )
        .into());
    }
    let res = recover_permutation(&x, &y)?;
    write_atomic(&a.out, |w| Ok(io::write_permutation(&res.permutation, w)?))?;
    println!("assignment cost {:e}", res.objective);
    Ok(())
}

fn experiment(a: &ExperimentArgs) -> Result<(), Failure> {
    let scale = if a.full_scale { Scale::Full } else { Scale::Desk };
    let mut plan = ExperimentPlan::named(&a.name, scale)?;
    if let Some(r) = a.reps {
        plan = plan.with_reps(r);
    }
    let records = plan.run(a.seed, a.timings)?;
    write_atomic(&a.out, |w| Ok(write_records_csv(&records, w)?))?;
    for (k, s) in summarize(&records)? {
        println!(
            "{} {} n={} d={}: median {:.4} [{:.4}, {:.4}] mean {:.4} ± {:.4} ({} reps)",
            k.scenario, k.metric, k.n, k.d, s.median, s.q25, s.q75, s.mean, s.stderr, s.count
        );
    }
    let failed = records.iter().filter(|r| r.certificate_ok == Some(false)).count();
    if failed > 0 {
        println!("risk certificate failed in {failed} replications");
    }
    Ok(())
}
