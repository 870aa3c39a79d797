use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlinked"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn version_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--version"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn simulate_then_recover_noiseless() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["simulate", "--scenario", "psd", "--n", "40", "--d", "15", "--seed", "9", "--noise-scale", "0", "--out-prefix", "s_"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["s_X.csv", "s_Y.csv", "s_truth.csv", "s_pi.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let o = run(dir.path(), &["recover", "--x", "s_X.csv", "--y", "s_Y.csv", "--out", "pi.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let got = fs::read_to_string(dir.path().join("pi.csv")).unwrap();
    assert_eq!(got, fs::read_to_string(dir.path().join("s_pi.csv")).unwrap());
}

#[test]
fn missing_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["recover", "--x", "a.csv", "--out", "pi.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["simulate", "--scenario", "psd", "--n", "0", "--d", "2", "--out-prefix", "x"]).status.code(), Some(1));
}

#[test]
fn denoise_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("X.csv"), "x1,x2\n0,1\n1,0\n").unwrap();
    fs::write(dir.path().join("Y.csv"), "x1\n0\n1\n").unwrap();
    let o = run(dir.path(), &["denoise", "--x", "X.csv", "--y", "Y.csv", "--sigma", "1", "--out-dir", "out"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dimension mismatch at"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_csv_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("Y.csv"), "x1\n0.5\nhello\n").unwrap();
    let o = run(dir.path(), &["npmle", "--y", "Y.csv", "--sigma", "1", "--out", "m.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3, column 1"), "{}", stderr(&o));
    fs::write(dir.path().join("E.csv"), "x1\n").unwrap();
    let o = run(dir.path(), &["npmle", "--y", "E.csv", "--sigma", "1", "--out", "m.csv"]);
    assert!(stderr(&o).contains("no rows"), "{}", stderr(&o));
}

#[test]
fn denoise_writes_outputs_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["simulate", "--scenario", "separable", "--n", "64", "--d", "2", "--seed", "1", "--out-prefix", ""]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let args = [
        "denoise", "--x", "X.csv", "--y", "Y.csv", "--sigma", "0.0625", "--truth", "truth.csv", "--lambda", "0.3535533905932738",
        "--smooth", "0.5", "--out-dir", "out",
    ];
    let o = run(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["fhat.csv", "nu_hat.csv", "plan.csv", "certificate.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let cert = fs::read_to_string(dir.path().join("out/certificate.json")).unwrap();
    assert!(cert.contains("\"holds\":true"), "{cert}");
    let first = fs::read(dir.path().join("out/fhat.csv")).unwrap();
    assert_eq!(run(dir.path(), &args).status.code(), Some(0));
    assert_eq!(first, fs::read(dir.path().join("out/fhat.csv")).unwrap());
}

#[test]
fn strict_mode_flags_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &["simulate", "--scenario", "radial", "--n", "60", "--d", "2", "--seed", "2", "--out-prefix", ""]);
    let base = ["npmle", "--y", "Y.csv", "--sigma", "0.0625", "--out", "m.csv", "--max-iter", "1"];
    let o = run(dir.path(), &[&base[..], &["--strict"]].concat());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!dir.path().join("m.csv").exists());
    assert_eq!(run(dir.path(), &base).status.code(), Some(0));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &["simulate", "--scenario", "step2", "--n", "30", "--d", "1", "--seed", "2", "--out-prefix", ""]);
    fs::write(dir.path().join("run.cfg"), "# defaults\nsigma = 1\nout = from_config.csv\ntol=1e-7\n").unwrap();
    let o = run(dir.path(), &["npmle", "--config", "run.cfg", "--y", "Y.csv", "--out", "from_flag.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("from_flag.csv").exists());
    assert!(!dir.path().join("from_config.csv").exists());
    fs::write(dir.path().join("bad.cfg"), "nonsense = 1\n").unwrap();
    let o = run(dir.path(), &["npmle", "--config", "bad.cfg", "--y", "Y.csv", "--sigma", "1", "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn experiment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["experiment", "--name", "recovery-sep", "--reps", "2", "--seed", "5", "--out", out, "--jobs", "2"];
    assert_eq!(run(dir.path(), &args("a.csv")).status.code(), Some(0));
    assert_eq!(run(dir.path(), &args("b.csv")).status.code(), Some(0));
    let a = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b.csv")).unwrap());
    assert!(a.starts_with("scenario,seed,n,d,metric,value,runtime_ms,certificate_ok\n"));
    assert_eq!(a.lines().count(), 1 + 7 * 2);
}
