use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffbal::io::read_matrix;
use nalgebra::DMatrix;
use serde_json::Value;
use tempfile::TempDir;

fn diffbal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffbal"))
        .args(args)
        .env_remove("DIFFBAL_OUT")
        .env_remove("DIFFBAL_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = diffbal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A = diag(−1, −2), B = (1, 1)ᵀ, C = (1, 1).
fn write_lti(dir: &Path) -> PathBuf {
    let path = dir.join("lti.json");
    std::fs::write(
        &path,
        r#"{"builtin": "lti", "A": [[-1, 0], [0, -2]], "B": [[1], [1]], "C": [[1, 1]]}"#,
    )
    .unwrap();
    path
}

/// `∫₀ᵀ e^{−(a_i + a_j)t} dt` for decay rates `a`, scaled by `v_i v_j`.
fn diagonal_lti_gramian(a: &[f64], v: &[f64], horizon: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), a.len(), |i, j| {
        let r = a[i] + a[j];
        v[i] * v[j] * (1.0 - (-r * horizon).exp()) / r
    })
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn zero_input_from_origin_stays_at_origin() {
    let dir = TempDir::new().unwrap();
    let lti = write_lti(dir.path());
    ok(&[
        "--out", s(dir.path()), "simulate", "--model", s(&lti), "--x0", "zeros",
        "--input", "zero", "--t0", "0", "--tf", "1", "--dt", "0.1",
    ]);
    let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,u1,y1"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 11);
    for row in rows {
        assert!(row.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{row}");
    }
    let manifest = json(dir.path().join("manifest-simulate.json"));
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["grid"]["dt"], 0.1);
    assert!(manifest["artifacts"]["trajectory.csv"].as_str().unwrap().len() == 64);
}

#[test]
fn bad_grid_names_all_three_flags() {
    let dir = TempDir::new().unwrap();
    let out = diffbal(&[
        "--out", s(dir.path()), "simulate", "--model", "rl:4", "--t0", "0", "--tf", "1",
        "--dt", "0.3",
    ]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    for flag in ["--t0", "--tf", "--dt"] {
        assert!(err.contains(flag), "{err}");
    }
}

#[test]
fn bad_initial_state_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = diffbal(&[
        "--out", s(dir.path()), "simulate", "--model", "rl:4", "--tf", "1", "--dt", "0.1",
        "--x0", "1,2,3",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--x0"));
}

#[test]
fn blow_up_exits_with_divergence_code() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("blowup.json");
    std::fs::write(
        &model,
        r#"{"name": "blowup", "n": 1, "m": 1, "p": 1, "B": [[0]], "f": ["x1^2"], "h": ["x1"]}"#,
    )
    .unwrap();
    let out = diffbal(&[
        "--out", s(dir.path()), "simulate", "--model", s(&model), "--x0", "1", "--tf", "2",
        "--dt", "0.01",
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn observability_gramian_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let lti = write_lti(dir.path());
    ok(&[
        "--out", s(dir.path()), "gramian", "--model", s(&lti), "--tf", "2", "--dt", "0.001",
        "--kind", "obs", "--method", "exact",
    ]);
    let w: DMatrix<f64> = read_matrix(dir.path().join("observability.csv")).unwrap();
    let oracle = diagonal_lti_gramian(&[1.0, 2.0], &[1.0, 1.0], 2.0);
    assert!(rel_diff(&w, &oracle) < 1e-5, "{w} vs {oracle}");

    let meta = json(dir.path().join("observability.json"));
    let eig: Vec<f64> = meta["eigenvalues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(eig[0] >= eig[1]);
    assert_eq!(meta["kind"], "observability");
}

#[test]
fn balance_recovers_hankel_values() {
    let dir = TempDir::new().unwrap();
    let lti = write_lti(dir.path());
    let base = ["--model", s(&lti), "--tf", "3", "--dt", "0.001"];
    for kind in ["reach", "obs"] {
        let mut args = vec!["--out", s(dir.path()), "gramian"];
        args.extend(base);
        args.extend(["--kind", kind]);
        ok(&args);
    }
    let wr = dir.path().join("reachability.csv");
    let wo = dir.path().join("observability.csv");
    ok(&["--out", s(dir.path()), "balance", "--wr", s(&wr), "--wo", s(&wo)]);

    // eigenvalues of the 2×2 product from trace and determinant
    let p = diagonal_lti_gramian(&[1.0, 2.0], &[1.0, 1.0], 3.0);
    let prod = &p * &p;
    let (tr, det) = (prod.trace(), prod.determinant());
    let disc = (tr * tr / 4.0 - det).sqrt();
    let expected = [(tr / 2.0 + disc).sqrt(), (tr / 2.0 - disc).sqrt()];

    let meta = json(dir.path().join("balancing.json"));
    let sigma = meta["sigma"].as_array().unwrap();
    for (got, want) in sigma.iter().zip(expected) {
        let got = got.as_f64().unwrap();
        assert!((got - want).abs() / want < 1e-4, "{got} vs {want}");
    }
    assert_eq!(meta["effective_rank"], 2);
}

#[test]
fn sequential_runs_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [&a, &b] {
        ok(&[
            "--threads", "1", "--seed", "7", "--out", s(dir.path()), "gramian", "--model",
            "rl:12", "--x0", "random:0.5", "--input", "sin(t)", "--tf", "5", "--dt", "0.01",
            "--kind", "reach", "--method", "frechet", "--s", "0.01",
        ]);
    }
    for name in ["reachability.csv", "reachability.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let ma = json(a.path().join("manifest-gramian.json"));
    let mb = json(b.path().join("manifest-gramian.json"));
    assert_eq!(ma["artifacts"], mb["artifacts"]);
    assert_eq!(ma["method"], "frechet_approx");
    assert_eq!(ma["s"], 0.01);
    assert_eq!(ma["seed"], 7);
}

#[test]
fn parallel_and_sequential_agree() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "4")] {
        ok(&[
            "--threads", threads, "--out", s(dir.path()), "gramian", "--model", "rl:10",
            "--input", "sin(t)", "--tf", "4", "--dt", "0.01", "--kind", "obs", "--method",
            "frechet",
        ]);
    }
    let x = std::fs::read(a.path().join("observability.csv")).unwrap();
    let y = std::fs::read(b.path().join("observability.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn replay_reproduces_artifacts() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    ok(&[
        "--out", s(&first), "check", "pd", "--model", "rl:6", "--input", "sin(t)", "--tf",
        "4", "--dt", "0.01", "--subintervals", "4",
    ]);
    let manifest = first.join("manifest-check-pd.json");

    let second = dir.path().join("second");
    let out = ok(&["replay", "--manifest", s(&manifest), "--into", s(&second)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("artifacts match"));
    assert_eq!(
        std::fs::read(first.join("pd_report.json")).unwrap(),
        std::fs::read(second.join("pd_report.json")).unwrap()
    );

    // in place, into the recorded directory
    ok(&["replay", "--manifest", s(&manifest)]);

    let mut tampered = json(&manifest);
    tampered["artifacts"]["pd_report.json"] = Value::String("0".repeat(64));
    let bad = dir.path().join("tampered.json");
    std::fs::write(&bad, tampered.to_string()).unwrap();
    let out = diffbal(&["replay", "--manifest", s(&bad), "--into", s(&second)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("pd_report.json"));
}

#[test]
fn replay_refuses_changed_inputs() {
    let dir = TempDir::new().unwrap();
    let lti = write_lti(dir.path());
    let out_dir = dir.path().join("run");
    ok(&[
        "--out", s(&out_dir), "simulate", "--model", s(&lti), "--input", "1", "--tf", "1",
        "--dt", "0.1",
    ]);
    std::fs::write(
        &lti,
        r#"{"builtin": "lti", "A": [[-3, 0], [0, -2]], "B": [[1], [1]], "C": [[1, 1]]}"#,
    )
    .unwrap();
    let out = diffbal(&["replay", "--manifest", s(&out_dir.join("manifest-simulate.json"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn rl_network_is_symmetric_under_identity() {
    let dir = TempDir::new().unwrap();
    ok(&[
        "--out", s(dir.path()), "check", "symmetry", "--model", "rl:100", "--input",
        "sin(t)+sin(3*t)", "--tf", "10", "--dt", "0.01", "--scheme", "euler", "--S",
        "identity",
    ]);
    let cert = json(dir.path().join("certificate.json"));
    assert_eq!(cert["verdict"], true);
    assert_eq!(cert["res_dyn"], 0.0);
    assert_eq!(cert["res_out"], 0.0);
}

/// A = [[−1, 0, 0], [0, −2, 0], [0, 0, −3]], B = e1 + e2: the third mode is unreachable.
fn write_unreachable_block(dir: &Path) -> PathBuf {
    let path = dir.join("block.json");
    std::fs::write(
        &path,
        r#"{"builtin": "lti", "A": [[-1, 0, 0], [0, -2, 0], [0, 0, -3]],
            "B": [[1], [1], [0]], "C": [[1, 1, 1]]}"#,
    )
    .unwrap();
    path
}

#[test]
fn unreachable_mode_fails_pd_check() {
    let dir = TempDir::new().unwrap();
    let block = write_unreachable_block(dir.path());
    ok(&[
        "--out", s(dir.path()), "check", "pd", "--model", s(&block), "--input", "sin(t)",
        "--tf", "4", "--dt", "0.01", "--kind", "reach", "--subintervals", "4",
    ]);
    let report = json(dir.path().join("pd_report.json"));
    assert_eq!(report["verdict"], false);
    let entries = report["entries"].as_array().unwrap();
    assert!(entries.len() >= 4);
    assert!(entries.iter().all(|e| e["positive"] == false));
}

#[test]
fn dual_without_certificate_exits_4_with_residuals() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("skew.json");
    std::fs::write(
        &model,
        r#"{"builtin": "lti", "A": [[-1, 2], [0, -1]], "B": [[1], [0]], "C": [[1, 0]]}"#,
    )
    .unwrap();
    let out = diffbal(&[
        "--out", s(dir.path()), "gramian", "--model", s(&model), "--tf", "1", "--dt", "0.01",
        "--kind", "dual", "--S", "identity",
    ]);
    assert_eq!(code(&out), 4);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("res_dyn") && err.contains("res_out"), "{err}");
}

#[test]
fn dual_gramian_of_symmetric_model_matches_reachability() {
    let dir = TempDir::new().unwrap();
    let base = ["--model", "rl:8", "--input", "sin(t)", "--tf", "3", "--dt", "0.01"];
    for kind in ["reach", "dual"] {
        let mut args = vec!["--out", s(dir.path()), "gramian"];
        args.extend(base);
        args.extend(["--kind", kind]);
        ok(&args);
    }
    let wr: DMatrix<f64> = read_matrix(dir.path().join("reachability.csv")).unwrap();
    let wd: DMatrix<f64> = read_matrix(dir.path().join("dual.csv")).unwrap();
    assert!(rel_diff(&wd, &wr) < 1e-8);
    let congruence = json(dir.path().join("congruence.json"));
    assert_eq!(congruence["matched"], "both");
}

#[test]
fn rl_pipeline_orders() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    let base = [
        "--model", "rl:100", "--x0", "zeros", "--input", "sin(t)+sin(3*t)", "--t0", "0",
        "--tf", "100", "--dt", "0.01", "--scheme", "euler",
    ];
    let with = |head: &[&'static str], tail: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = vec!["--threads".into(), "1".into(), "--out".into()];
        v.push(s(root).into());
        v.extend(head.iter().map(|x| x.to_string()));
        v.extend(base.iter().map(|x| x.to_string()));
        v.extend(tail.iter().map(|x| x.to_string()));
        v
    };
    let run = |args: Vec<String>| ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    run(with(&["simulate"], &[]));
    run(with(
        &["gramian"],
        &["--kind", "reach", "--method", "frechet", "--s", "0.01"],
    ));
    let w = root.join("reachability.csv");
    ok(&["--out", s(root), "balance", "--symmetric", "--w", s(&w)]);

    let mut errors = Vec::new();
    for k in ["10", "5", "100"] {
        let sub = root.join(format!("k{k}"));
        let mut args = with(&["reduce"], &["--transform", s(root), "--k", k]);
        args[3] = s(&sub).into();
        run(args);
        ok(&[
            "--out", s(&sub), "compare", "--full", s(&root.join("trajectory.csv")),
            "--reduced", s(&sub.join("reduced.csv")),
        ]);
        let report = json(sub.join("error_report.json"));
        errors.push(report["rel_l2"].as_f64().unwrap());
    }
    assert!(errors[0] < errors[1], "{errors:?}");
    assert!(errors[2] <= 1e-10, "{errors:?}");

    let eig: Vec<f64> = json(root.join("reachability.json"))["eigenvalues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(eig[0] / eig[19] > 1e3);

    let mut args = with(&["reduce"], &["--transform", s(root), "--k", "101"]);
    args[3] = s(&root.join("k101")).into();
    let out = diffbal(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&out), 5);
}

#[test]
fn compare_rejects_mismatched_grids() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["--out", s(&a), "simulate", "--model", "rl:3", "--tf", "1", "--dt", "0.1"]);
    ok(&["--out", s(&b), "simulate", "--model", "rl:3", "--tf", "1", "--dt", "0.05"]);
    let out = diffbal(&[
        "--out", s(dir.path()), "compare", "--full", s(&a.join("trajectory.csv")),
        "--reduced", s(&b.join("trajectory.csv")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn balance_flag_conflicts_are_usage_errors() {
    let out = diffbal(&["balance", "--symmetric"]);
    assert_eq!(code(&out), 2);
    let out = diffbal(&["balance", "--wr", "a.csv"]);
    assert_eq!(code(&out), 2);
}
