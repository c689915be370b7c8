use std::path::Path;
use std::process::{Command, Output};

fn depkern(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depkern"))
        .args(args)
        .env_remove("DEPKERN_THREADS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn write_csv(dir: &Path, name: &str, rows: &[(f64, f64)], header: bool) -> String {
    let mut s = String::new();
    if header {
        s.push_str("x,y\n");
    }
    for (x, y) in rows {
        s.push_str(&format!("{x},{y}\n"));
    }
    let path = dir.join(name);
    std::fs::write(&path, s).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn estimate_identity_data() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, i as f64)).collect();
    let input = write_csv(dir.path(), "yx.csv", &rows, true);
    let out = depkern(&["estimate", "--input", &input]);
    let v = json(&out);
    assert_eq!(v["xi_hat"].as_f64().unwrap(), 8.0 / 11.0);
    assert_eq!(v["n"], 10);
    assert_eq!(v["kernel"], "epanechnikov");
    // n*h2 < 2 at n = 10 with default bandwidths
    assert!(!v["warnings"].as_array().unwrap().is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning:"));
}

#[test]
fn estimate_independent_normals() {
    let dir = tempfile::tempdir().unwrap();
    let sim = depkern::montecarlo::sample_bivariate_normal(
        2000,
        0.0,
        &mut depkern::montecarlo::replicate_rng(42, 0, 0),
    )
    .unwrap();
    let rows: Vec<(f64, f64)> = sim.x().iter().copied().zip(sim.y().iter().copied()).collect();
    let input = write_csv(dir.path(), "ind.csv", &rows, false);
    let v = json(&depkern(&["estimate", "--input", &input, "--kernel", "triangular"]));
    assert!((v["tau2_hat"].as_f64().unwrap() - 1.0 / 3.0).abs() < 0.05);
}

#[test]
fn ties_and_data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_csv(dir.path(), "t.csv", &[(1.0, 2.0), (1.0, 3.0), (2.0, 4.0), (3.0, 1.0), (4.0, 5.0)], false);
    let out = depkern(&["estimate", "--input", &input, "--ties", "error"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tied"));
    let ok = depkern(&["estimate", "--input", &input, "--ties", "jitter", "--seed", "3"]);
    assert!(ok.status.success());
    let missing = depkern(&["estimate", "--input", "/nonexistent/file.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n3,abc\n").unwrap();
    let out = depkern(&["estimate", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(depkern(&["sigma0", "--kernel", "gaussian"]).status.code(), Some(1));
    assert_eq!(depkern(&["centering", "--n", "2"]).status.code(), Some(1));
    assert_eq!(depkern(&["centering", "--n", "2", "--surrogate"]).status.code(), Some(1));
    assert_eq!(depkern(&["estimate"]).status.code(), Some(1));
    assert_eq!(depkern(&["simulate", "--n", "100", "--rho-rule", "sideways"]).status.code(), Some(1));
    assert_eq!(depkern(&["sigma2", "--copula", "gaussian"]).status.code(), Some(1));
    assert_eq!(depkern(&["oracle", "--n", "6", "--output", "csv"]).status.code(), Some(1));
    assert_eq!(depkern(&["nulldist", "--n", "100", "--threads", "0"]).status.code(), Some(1));
    assert_eq!(depkern(&["--help"]).status.code(), Some(0));
}

#[test]
fn test_subcommand_reports() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<(f64, f64)> = (1..=200).map(|i| (i as f64, (i as f64).sqrt())).collect();
    let input = write_csv(dir.path(), "dep.csv", &rows, false);
    let v = json(&depkern(&["test", "--input", &input, "--method", "kernel"]));
    assert_eq!(v["method"], "kernel");
    assert_eq!(v["reject"], true);
    let z = v["statistic"].as_f64().unwrap();
    assert!(z > 1.6448536269514722);
    assert!(v["components"]["b_n"].is_number());
    let v = json(&depkern(&["test", "--input", &input, "--method", "chatterjee", "--alpha", "0.01"]));
    assert_eq!(v["reject"], true);
    assert!(v.get("kernel").is_none());
    assert_eq!(depkern(&["test", "--input", &input, "--method", "pearson"]).status.code(), Some(1));
    assert_eq!(depkern(&["test", "--input", &input, "--alpha", "1.5"]).status.code(), Some(1));
}

#[test]
fn sigma0_fixtures_and_tolerance() {
    // composite Simpson oracle values
    let fixtures = [("epanechnikov", 0.005390314980158732), ("triangular", 0.004726386439283745)];
    for (k, want) in fixtures {
        let v = json(&depkern(&["sigma0", "--kernel", k]));
        let got = v["sigma0_sq"].as_f64().unwrap();
        assert!((got - want).abs() < 1e-8, "{k}");
        assert!((v["sigma0"].as_f64().unwrap() - got.sqrt()).abs() < 1e-15);
        let coarse = json(&depkern(&["sigma0", "--kernel", k, "--tol", "1e-6"]));
        assert!((coarse["sigma0_sq"].as_f64().unwrap() - got).abs() < 1e-6);
    }
}

#[test]
fn centering_outputs() {
    let v = json(&depkern(&["centering", "--n", "50"]));
    let bhat = v["b_hat_n"].as_f64().unwrap();
    assert_eq!(v["b_n"].as_f64().unwrap(), 6.0 * bhat - 2.0);
    let c = &v["components"];
    let parts = c["offdiag_kernel_factor"].as_f64().unwrap() * c["offdiag_b_mean"].as_f64().unwrap()
        + c["diag_kernel_factor"].as_f64().unwrap() * c["diag_b_mean"].as_f64().unwrap();
    assert!((parts - bhat).abs() < 1e-15);
    let s = json(&depkern(&["centering", "--n", "3", "--surrogate"]));
    assert!(s["b_tilde_n"].as_f64().unwrap().is_finite());
    let csv = depkern(&["centering", "--n", "50", "--output", "csv"]);
    assert!(String::from_utf8_lossy(&csv.stdout).starts_with("n,kernel,h1,h2,b_hat_n,b_n,"));
}

#[test]
fn oracle_and_sigma2() {
    let v = json(&depkern(&["oracle", "--n", "6", "--kernel", "triangular"]));
    assert_eq!(v["mode"], "exhaustive");
    assert_eq!(v["report"]["moments"]["permutations"], 720);
    let v = json(&depkern(&["oracle", "--n", "40", "--permutations", "2000", "--seed", "5"]));
    assert_eq!(v["mode"], "monte_carlo");
    assert!(v["d_term"]["relative_error"].as_f64().unwrap() < 0.2);
    let v = json(&depkern(&["sigma2", "--copula", "independence", "--nodes-4d", "16"]));
    assert!(v["sigma_sq"].as_f64().unwrap().abs() < 1e-6);
    let v = json(&depkern(&["sigma2", "--copula", "gaussian", "--rho", "0.3"]));
    assert!(v["sigma_sq"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_layouts() {
    let out = depkern(&["simulate", "--scenario", "custom", "--n", "50", "--rho-rule", "zero", "--reps", "1", "--seed", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "n,rho_rule,method,kernel,h1,h2,alpha,reps,reject_rate,seed");
    assert_eq!(lines.count(), 3);
    let v = json(&depkern(&[
        "simulate", "--n", "40,60", "--rho-rule", "fixed:1", "--reps", "5", "--methods", "chatterjee", "--output", "json",
    ]));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["reject_rate"].as_f64() == Some(1.0)));
}

#[test]
fn simulate_same_seed_same_bytes() {
    let args = ["simulate", "--n", "60,80", "--rho-rule", "zero,n-pow", "--reps", "30", "--seed", "9"];
    let a = depkern(&args);
    let b = depkern(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn nulldist_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hist.csv");
    let o = depkern(&["nulldist", "--n", "60", "--reps", "100", "--bins", "10", "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("bin_lo,bin_hi,count,normal_density_mid\n"));
    let total: usize = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("hist.csv.json")).unwrap()).unwrap();
    assert_eq!(total, side["in_range"].as_u64().unwrap() as usize);
    assert_eq!(
        total + side["underflow"].as_u64().unwrap() as usize + side["overflow"].as_u64().unwrap() as usize,
        100
    );
    assert_eq!(depkern(&["nulldist", "--n", "60", "--reps", "99"]).status.code(), Some(1));
}

#[test]
fn threads_flag_and_env_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, env: bool, name: &str| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_depkern"));
        cmd.args(["nulldist", "--n", "80", "--reps", "150", "--bins", "12", "--seed", "2", "--out", out.to_str().unwrap()]);
        if env {
            cmd.env("DEPKERN_THREADS", threads);
        } else {
            cmd.env_remove("DEPKERN_THREADS").args(["--threads", threads]);
        }
        assert!(cmd.status().unwrap().success());
        (std::fs::read(&out).unwrap(), std::fs::read(dir.path().join(format!("{name}.json"))).unwrap())
    };
    let a = run("1", false, "a.csv");
    let b = run("3", false, "b.csv");
    let c = run("2", true, "c.csv");
    assert_eq!(a, b);
    assert_eq!(a, c);
}
