use std::process::{Command, Output};

fn kslayers(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kslayers")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

/// λ with ε = 0.02, small enough for the single-bubble construction.
const LAMBDA_EPS_002: &str = "1.9531818567221454e-27";

#[test]
fn nondegen_grid_has_twelve_rows() {
    let o = kslayers(&["nondegen", "--kmax", "4", "--b-grid", "1e-4,1e-3,1e-2"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let rows = data_rows(&s);
    assert_eq!(rows.len(), 12);
    for r in rows {
        let det: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!(det.abs() > 1e-8);
    }
    assert!(s.starts_with("# kslayers "));
}

#[test]
fn nondegen_is_thread_count_independent() {
    let run = |t: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_kslayers")).env("KSLAYERS_THREADS", t).args(["nondegen", "--kmax", "3"]).output().unwrap();
        assert!(o.status.success());
        o.stdout
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn neumann_single_layer_green() {
    let o = kslayers(&["green", "--k", "1", "--b", "1e-3", "--outer", "neumann", "--format", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let alphas = v["result"]["free_alphas"].as_array().unwrap();
    assert_eq!(alphas.len(), 1);
    let a = alphas[0].as_f64().unwrap();
    assert!(a > 0.0 && a < 1.0);
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config"]["outer"], "neumann");
}

#[test]
fn eta_outside_window_is_a_validation_error() {
    let o = kslayers(&["ansatz", "--lambda", LAMBDA_EPS_002, "--eta", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("(2/3, 1)"), "{err}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(kslayers(&["green", "--k", "1"]).status.code(), Some(2));
    assert_eq!(kslayers(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(kslayers(&["branch", "--i", "2", "--sign", "x"]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_three() {
    // No matched outer solution exists at ε ≈ 0.11.
    let o = kslayers(&["ansatz", "--lambda", "1e-3"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let args = ["ansatz", "--lambda", LAMBDA_EPS_002, "--nodes", "800"];
    let a = kslayers(&args);
    let b = kslayers(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn solve_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = kslayers(&["--out", out, "solve", "--lambda", LAMBDA_EPS_002]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = dir.path().join("solve.csv");
    assert!(dir.path().join("solve.json").exists());
    let o = kslayers(&["report", "--in", csv.to_str().unwrap(), "--k", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let m = v["result"]["report"]["origin_mass"].as_f64().unwrap();
    assert!((m / (8.0 * std::f64::consts::PI) - 1.0).abs() < 0.1, "origin mass {m}");
    assert_eq!(v["result"]["newton_iters"], 0);
}

#[test]
fn config_file_fills_missing_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# green function\nk = 2\nb = 1e-3\nouter = dirichlet\n").unwrap();
    let o = kslayers(&["--config", cfg.to_str().unwrap(), "green", "--b", "1e-2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["config"]["k"], 2);
    assert_eq!(v["config"]["b"], 0.01);
}

#[test]
fn branch_leaves_the_second_eigenvalue_with_one_zero() {
    let o = kslayers(&["branch", "--i", "2", "--sign", "-", "--steps", "6"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let rows = data_rows(&s);
    assert_eq!(rows.len(), 6);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        let mu: f64 = cols[0].parse().unwrap();
        assert!((mu - 15.682).abs() < 0.1);
        assert_eq!(cols[3], "1");
    }
}

#[test]
fn table_only_format_rejected_for_json_commands() {
    let o = kslayers(&["green", "--k", "1", "--b", "1e-3", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(2));
}
