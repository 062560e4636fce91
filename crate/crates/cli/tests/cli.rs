use std::path::Path;
use std::process::{Command, Output};

fn dualmatch(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualmatch"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn gen_fixture(dir: &Path) {
    let out = dualmatch(
        &["--out", ".", "--seed", "3", "--paths", "1", "gen", "--preset", "uniform-single", "--horizon", "120", "--trace"],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn run_writes_one_row_per_path() {
    let dir = tempfile::tempdir().unwrap();
    gen_fixture(dir.path());
    let out = dualmatch(
        &["--out", "res", "--paths", "100", "--seed", "7", "run", "--algo", "ca-dl", "--instance", "instance.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("res/results.csv"));
    assert_eq!(rows[0].join(","), "path,algo,reward,overalloc,avg_backlog,objective,stopping_time");
    assert_eq!(rows.len(), 101);
    for row in &rows[1..] {
        let v: Vec<f64> = row[2..6].iter().map(|x| x.parse().unwrap()).collect();
        // alpha = 1, gamma = 0 in the generated instance
        assert!((v[3] - (v[0] - v[1])).abs() < 1e-9);
    }
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    gen_fixture(dir.path());
    let args = ["--paths", "5", "--seed", "11", "run", "--algo", "co-dl", "--algo", "random", "--instance", "instance.json"];
    let a = dualmatch(&args, dir.path());
    let b = dualmatch(&args, dir.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn regret_table_written() {
    let dir = tempfile::tempdir().unwrap();
    gen_fixture(dir.path());
    let out = dualmatch(
        &["--out", "res", "--paths", "4", "run", "--algo", "ca-dl", "--instance", "instance.json", "--regret"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("res/regret.csv"));
    assert_eq!(rows[0].join(","), "path,opt,algo,alg_value,regret");
    assert_eq!(rows.len(), 5);
    for row in &rows[1..] {
        assert!(row[4].parse::<f64>().unwrap() >= -1e-6);
    }
}

#[test]
fn sweep_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    gen_fixture(dir.path());
    let out = dualmatch(
        &["--out", "sw", "sweep", "--trace", "trace_0.csv", "--rho", "0.4", "--alpha", "1..5", "--gamma", "0..10"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("sw/sweep.csv"));
    assert_eq!(rows.len(), 1 + 5 * 11);
}

#[test]
fn offline_writes_objective_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    gen_fixture(dir.path());
    let out = dualmatch(
        &["--out", "off", "offline", "--trace", "trace_0.csv", "--rho", "0.5", "--gamma", "5", "--alpha", "3"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let objective: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("off/objective.json")).unwrap()).unwrap();
    let certificate: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("off/dual_certificate.json")).unwrap()).unwrap();
    let primal = objective["objective_value"].as_f64().unwrap();
    let dual = certificate["value"].as_f64().unwrap();
    assert!(dual >= primal - 1e-6);
    if certificate["tied_within_capacity"].as_bool().unwrap() {
        assert!((dual - primal).abs() < 1e-6);
    }
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    gen_fixture(dir.path());
    let out = dualmatch(&["run", "--algo", "no-such", "--instance", "instance.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such"));
    std::fs::write(dir.path().join("bad.json"), "{\"m\": 1}").unwrap();
    let out = dualmatch(&["validate", "--instance", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = dualmatch(&["--paths", "0", "run", "--algo", "ca-dl", "--instance", "instance.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = dualmatch(&["recipe", "no_such_recipe"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dualmatch(&["--seed", "42", "dp", "--horizon", "0", "--gamma", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = dualmatch(&["--seed", "42", "offline", "--instance", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed 42"));
}

#[test]
fn dp_and_recipe_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dualmatch(&["--out", "dp", "dp", "--horizon", "50,100", "--gamma", "1", "--thresholds"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_rows(&dir.path().join("dp/dp_gap.csv")).len(), 3);
    assert_eq!(csv_rows(&dir.path().join("dp/dp_thresholds.csv")).len(), 151);
    let out = dualmatch(
        &["--out", "ex", "--paths", "4", "--format", "json", "recipe", "example41", "--horizon", "100"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let q: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ex/example41_quantiles.json")).unwrap()).unwrap();
    assert_eq!(q.as_array().unwrap().len(), 3);
}
