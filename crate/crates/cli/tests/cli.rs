use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const REFERENCE: &str = r#"{
    "arms": [
        {"family": "bernoulli_logit", "theta": [0.5, 0.5]},
        {"family": "bernoulli_logit", "theta": [-0.5, 0.5]}
    ],
    "covariates": [{"type": "intercept"}, {"type": "bernoulli", "p": 0.5}],
    "target": {"variant": "rsihr"},
    "policy": {"variant": "cadbcd", "gamma": 1, "m0": 5},
    "trial": {"n": 2000}
}"#;

fn small() -> String {
    REFERENCE.replace("\"n\": 2000", "\"n\": 100")
}

fn cara_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cara-lab"))
        .args(args)
        .env_remove("CARA_LAB_WORKERS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &TempDir, text: &str) -> PathBuf {
    let path = dir.path().join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_field_exits_2_and_names_it() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        &dir,
        &REFERENCE.replace("\"trial\": {\"n\": 2000}", "\"trial\": {}"),
    );
    let out = dir.path().join("out.json");
    let output = cara_lab(&["simulate", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("trial") && stderr.contains("`n`"),
        "{stderr}"
    );
    assert!(!out.exists());
}

#[test]
fn unknown_key_exits_2() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        &dir,
        &REFERENCE.replace("\"m0\": 5", "\"m0\": 5, \"eta\": 2"),
    );
    let output = cara_lab(&[
        "simulate",
        "--config",
        s(&config),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("eta"));
}

#[test]
fn simulate_csv_has_header_and_snapshot_rows() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, &small());
    let out = dir.path().join("trial.csv");
    let output = cara_lab(&[
        "simulate",
        "--config",
        s(&config),
        "--seed",
        "7",
        "--out",
        s(&out),
        "--format",
        "csv",
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "m,proportion,rho_hat");
    let ms: Vec<usize> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ms, vec![10, 15, 23, 35, 53, 80, 100]);

    let meta = read_json(&dir.path().join("trial.csv.meta.json"));
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["config"]["policy"]["m0"], 5);
    assert_eq!(meta["config"]["trial"]["refit_stride"], 1);
    assert!(meta["version"].is_string());
}

#[test]
fn simulate_is_byte_identical_for_same_seed() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, &small());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let output = cara_lab(&[
            "simulate",
            "--config",
            s(&config),
            "--seed",
            seed,
            "--out",
            s(&out),
        ]);
        assert!(
            output.status.success(),
            "{}",
            String::from_utf8_lossy(&output.stderr)
        );
        fs::read(out).unwrap()
    };
    let a = run("a.json", "11");
    let b = run("b.json", "11");
    let c = run("c.json", "12");
    assert_eq!(a, b);
    assert_ne!(a, c);

    let doc: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(doc["command"], "simulate");
    assert_eq!(doc["result"]["n"], 100);
    assert_eq!(
        doc["config"]["arms"][0]["box"]["lower"],
        serde_json::json!([-10.0, -10.0])
    );
}

#[test]
fn mc_output_is_independent_of_workers() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, &small());
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let output = cara_lab(&[
            "mc",
            "--config",
            s(&config),
            "--reps",
            "40",
            "--workers",
            workers,
            "--out",
            s(&out),
        ]);
        assert!(
            output.status.success(),
            "{}",
            String::from_utf8_lossy(&output.stderr)
        );
        fs::read(out).unwrap()
    };
    assert_eq!(run("w1.json", "1"), run("w8.json", "8"));
}

#[test]
fn mc_workers_default_from_environment() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, &small());
    let flag = dir.path().join("flag.json");
    let env = dir.path().join("env.json");
    assert!(cara_lab(&[
        "mc",
        "--config",
        s(&config),
        "--reps",
        "20",
        "--workers",
        "1",
        "--out",
        s(&flag)
    ])
    .status
    .success());
    let output = Command::new(env!("CARGO_BIN_EXE_cara-lab"))
        .args([
            "mc",
            "--config",
            s(&config),
            "--reps",
            "20",
            "--out",
            s(&env),
        ])
        .env("CARA_LAB_WORKERS", "3")
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(fs::read(flag).unwrap(), fs::read(env).unwrap());
}

#[test]
fn mc_single_replication_exits_2() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, &small());
    let out = dir.path().join("mc.json");
    let output = cara_lab(&[
        "mc",
        "--config",
        s(&config),
        "--reps",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn mc_reference_instance_passes() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, REFERENCE);
    let out = dir.path().join("mc.json");
    let output = cara_lab(&[
        "mc",
        "--config",
        s(&config),
        "--reps",
        "1000",
        "--out",
        s(&out),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let doc = read_json(&out);
    let failing: Vec<&Value> = doc["report"]["comparisons"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] != true)
        .collect();
    assert!(failing.is_empty(), "{failing:?}");
    assert_eq!(doc["all_pass"], true);
    assert_eq!(doc["config"]["mc"]["replications"], 1000);
}

#[test]
fn asymptotics_fixed_target_has_closed_form_variance() {
    let dir = TempDir::new().unwrap();
    let c = 0.3;
    let text = REFERENCE.replace(
        r#"{"variant": "rsihr"}"#,
        r#"{"variant": "fixed", "c": 0.3}"#,
    );
    let config = write_config(&dir, &text);
    let out = dir.path().join("asym.json");
    let output = cara_lab(&[
        "asymptotics",
        "--config",
        s(&config),
        "--gamma-grid",
        "0,0.5,1,2,10",
        "--out",
        s(&out),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let doc = read_json(&out);
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let gamma = row["gamma"].as_f64().unwrap();
        let sigma_sq = row["sigma_sq"].as_f64().unwrap();
        let expected = c * (1.0 - c) / (1.0 + 2.0 * gamma);
        assert!(
            (sigma_sq - expected).abs() < 1e-12,
            "gamma {gamma}: {sigma_sq} vs {expected}"
        );
    }
}

#[test]
fn asymptotics_gap_is_non_negative_and_decreasing() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, REFERENCE);
    let out = dir.path().join("asym.csv");
    let output = cara_lab(&[
        "asymptotics",
        "--config",
        s(&config),
        "--gamma-grid",
        "0,0.5,1,2,4,8,100,inf",
        "--out",
        s(&out),
        "--format",
        "csv",
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("gamma,lambda,sigma_sq,gap"));
    let gaps: Vec<f64> = lines
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(gaps.len(), 8);
    assert!(gaps.iter().all(|g| *g >= 0.0));
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert_eq!(*gaps.last().unwrap(), 0.0);

    let meta = read_json(&dir.path().join("asym.csv.meta.json"));
    let scalars = &meta["scalars"];
    // Exact enumeration over the two covariate atoms, computed independently.
    assert!((scalars["v"].as_f64().unwrap() - 0.5547599670).abs() < 1e-9);
    assert!((scalars["b"].as_f64().unwrap() - 0.0588504015).abs() < 1e-9);
}

#[test]
fn asymptotics_singular_information_exits_3() {
    let dir = TempDir::new().unwrap();
    // Arm 1 responds with probability 1 - 1e-13, so its Fisher information vanishes numerically.
    let text = REFERENCE.replace(
        r#"{"family": "bernoulli_logit", "theta": [0.5, 0.5]}"#,
        r#"{"family": "bernoulli_logit", "theta": [30.0, 0.0], "box": {"lower": [-40, -40], "upper": [40, 40]}}"#,
    );
    let config = write_config(&dir, &text);
    let output = cara_lab(&[
        "asymptotics",
        "--config",
        s(&config),
        "--gamma-grid",
        "1",
        "--out",
        s(&dir.path().join("a.json")),
    ]);
    assert_eq!(
        output.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn validate_passes_and_lists_checks() {
    let output = cara_lab(&["validate"]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success(), "{stdout}");
    let passes = stdout.lines().filter(|l| l.starts_with("[PASS]")).count();
    assert!(passes >= 6, "{stdout}");
    assert!(!stdout.contains("[FAIL]"));
}

#[test]
fn validate_negative_control_fails_expansion_check() {
    let output = cara_lab(&["validate", "--g-exponent-perturbation", "0.1"]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(!output.status.success());
    let line = stdout
        .lines()
        .find(|l| l.contains("g_expansion_order"))
        .unwrap();
    assert!(line.starts_with("[FAIL]"), "{stdout}");
}
