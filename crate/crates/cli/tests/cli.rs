use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn repctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repctl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn power_law_config(task: &str, epsilon: f64, extra: &str) -> String {
    format!(
        r#"{{
            "schema_version": 1,
            "task": "{task}",
            "problem": {{
                "horizon": 1.0, "epsilon": {epsilon},
                "dynamics": {{"kind": "gbm", "sigma": 0.2}},
                "growth": {{"kind": "power-law", "gamma": 1.0}}
            }}{extra}
        }}"#
    )
}

fn nerlove_arrow_config(task: &str) -> String {
    r#"{
        "schema_version": 1,
        "task": "TASK",
        "problem": {
            "horizon": 1.0, "epsilon": 0.1,
            "dynamics": {"kind": "nerlove-arrow", "sigma": 0.2, "kappa": 0.5},
            "growth": {"kind": "mink-seifert", "A": 1.0, "C": 1.0}
        },
        "grid": {"n_space": 81}
    }"#
    .replace("TASK", task)
}

fn run(task: &str, config: &str, out: &Path) -> Output {
    repctl(&[
        task,
        "--config",
        config,
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ])
}

fn stderr_errors(output: &Output) -> Vec<String> {
    let report: Value = serde_json::from_slice(&output.stderr).expect("JSON error list");
    report["errors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["field"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn closed_form_writes_psi_and_policy() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &power_law_config("closed-form", 0.1, ""),
    );
    let out = tmp.path().join("out");
    let result = run("closed-form", &cfg, &out);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    for name in ["psi.csv", "policy.csv", "manifest.json"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let policy = fs::read_to_string(out.join("policy.csv")).unwrap();
    let lines: Vec<_> = policy.lines().collect();
    assert_eq!(lines[0], "t_switch,sign");
    let switch: f64 = lines[2].split(',').next().unwrap().parse().unwrap();
    assert!((switch - 0.046_898_2).abs() < 1e-6);
}

#[test]
fn sweep_argmax_near_switch_time() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.json",
        &power_law_config("sweep-switch", 0.1, ""),
    );
    let out = tmp.path().join("out");
    assert!(run("sweep-switch", &cfg, &out).status.success());
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let best = text
        .lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
            (cols[0], cols[1])
        })
        .fold(
            (0.0, f64::NEG_INFINITY),
            |b, r| if r.1 > b.1 { r } else { b },
        );
    assert!((best.0 - 0.046_898_2).abs() < 1e-3, "argmax {}", best.0);
}

#[test]
fn nerlove_arrow_value_vanishes_at_zero() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "n.json", &nerlove_arrow_config("solve-hjb"));
    let out = tmp.path().join("out");
    let result = run("solve-hjb", &cfg, &out);
    assert!(
        result.status.success(),
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert!(out.join("value.json").is_file());
    let text = fs::read_to_string(out.join("value.csv")).unwrap();
    let mut zero_rows = 0;
    for line in text.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        if cols[0] == 0.0 {
            assert_eq!(cols[2], 0.0);
            zero_rows += 1;
        }
    }
    assert!(zero_rows > 1);
}

#[test]
fn validate_reports_named_fields() {
    let tmp = TempDir::new().unwrap();

    let good = write_config(
        tmp.path(),
        "good.json",
        &power_law_config("closed-form", 0.1, ""),
    );
    assert!(repctl(&["validate", "--config", &good, "--quiet"])
        .status
        .success());

    let bad = write_config(
        tmp.path(),
        "eps.json",
        &power_law_config("closed-form", 1.5, ""),
    );
    let result = repctl(&["validate", "--config", &bad]);
    assert_eq!(result.status.code(), Some(2));
    let fields = stderr_errors(&result);
    assert_eq!(fields.len(), 1);
    assert!(fields[0].contains("epsilon"));

    let no_grid = write_config(
        tmp.path(),
        "grid.json",
        &power_law_config("solve-hjb", 0.1, ""),
    );
    let result = repctl(&["validate", "--config", &no_grid]);
    assert_eq!(result.status.code(), Some(2));
    assert_eq!(stderr_errors(&result), ["grid"]);
}

#[test]
fn invalid_run_exits_two_without_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        &power_law_config("solve-hjb", 0.1, ""),
    );
    let out = tmp.path().join("out");
    let result = run("solve-hjb", &cfg, &out);
    assert_eq!(result.status.code(), Some(2));
    assert!(!out.exists());

    let missing = tmp.path().join("nope.json");
    let result = run("closed-form", missing.to_str().unwrap(), &out);
    assert_eq!(result.status.code(), Some(2));
    assert_eq!(stderr_errors(&result), ["config"]);
}

#[test]
fn manifest_round_trip_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let extra = r#",
        "mc": {"n_paths": 2000, "seed": 11},
        "sweep": {"mode": "monte-carlo", "n_points": 5}"#;
    let cfg = write_config(
        tmp.path(),
        "mc.json",
        &power_law_config("sweep-switch", 0.1, extra),
    );
    let first = tmp.path().join("first");
    assert!(run("sweep-switch", &cfg, &first).status.success());

    let manifest = first.join("manifest.json");
    let m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["mc"]["dt"], 1e-3);
    assert!(m["toolkit_version"].is_string());

    let second = tmp.path().join("second");
    assert!(run("sweep-switch", manifest.to_str().unwrap(), &second)
        .status
        .success());
    assert_eq!(
        fs::read(first.join("sweep.csv")).unwrap(),
        fs::read(second.join("sweep.csv")).unwrap()
    );
}

#[test]
fn seed_override_changes_estimate() {
    let tmp = TempDir::new().unwrap();
    let extra = r#",
        "mc": {"n_paths": 500},
        "policy": {"kind": "optimal-pulsing"}"#;
    let cfg = write_config(
        tmp.path(),
        "e.json",
        &power_law_config("evaluate", 0.1, extra),
    );
    let read = |dir: &Path| -> Value {
        serde_json::from_str(&fs::read_to_string(dir.join("estimate.json")).unwrap()).unwrap()
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = |seed: &str, dir: &Path| {
        repctl(&[
            "evaluate",
            "--config",
            &cfg,
            "--out",
            dir.to_str().unwrap(),
            "--seed",
            seed,
            "--quiet",
        ])
    };
    assert!(o("1", &a).status.success());
    assert!(o("2", &b).status.success());
    assert_eq!(read(&a)["seed"], 1);
    assert_ne!(read(&a)["mean"], read(&b)["mean"]);
}

#[test]
fn simulate_and_convergence_artifacts() {
    let tmp = TempDir::new().unwrap();
    let extra = r#",
        "mc": {"dt": 0.01, "r0": 2.0},
        "policy": {"kind": "constant", "mu": -0.05}"#;
    let cfg = write_config(
        tmp.path(),
        "p.json",
        &power_law_config("simulate", 0.1, extra),
    );
    let out = tmp.path().join("sim");
    assert!(run("simulate", &cfg, &out).status.success());
    let path = fs::read_to_string(out.join("path.csv")).unwrap();
    assert_eq!(path.lines().count(), 102);

    let extra = r#", "grid": {"n_space": 41}"#;
    let cfg = write_config(
        tmp.path(),
        "v.json",
        &power_law_config("convergence", 0.1, extra),
    );
    let out = tmp.path().join("conv");
    assert!(run("convergence", &cfg, &out).status.success());
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("convergence.json")).unwrap()).unwrap();
    assert_eq!(report["levels"].as_array().unwrap().len(), 3);
    assert_eq!(report["monotone"], true);
}

#[test]
fn subcommand_must_match_config_task() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &power_law_config("closed-form", 0.1, ""),
    );
    let result = run("solve-hjb", &cfg, &tmp.path().join("out"));
    assert_eq!(result.status.code(), Some(2));
    assert!(stderr_errors(&result).contains(&"task".to_string()));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let result = repctl(&["validate", "--config", path.to_str().unwrap(), "--quiet"]);
        assert!(
            result.status.success(),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&result.stderr)
        );
        seen += 1;
    }
    assert!(seen >= 4);
}
