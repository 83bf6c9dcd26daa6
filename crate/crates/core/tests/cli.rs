use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ergolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergolab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn diagnostic(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("a diagnostic line");
    serde_json::from_str(line).expect("diagnostic is JSON")
}

fn stem(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn systems_table_and_json() {
    let out = ergolab(&["systems"]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 8, "{table}");

    let out = ergolab(&["systems", "--json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let keys: Vec<&str> = v["systems"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["key"].as_str().unwrap())
        .collect();
    assert_eq!(
        keys,
        ["harmonic", "pendulum", "damped", "rotation", "doubling", "contraction", "custom-polynomial"]
    );
}

#[test]
fn unknown_flag_exits_two_with_diagnostic() {
    let out = ergolab(&["systems", "--verbose"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(diagnostic(&out)["kind"], "validation");
}

#[test]
fn portrait_writes_outputs_and_manifest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out_stem = stem(dir.path(), "fig1");
    let cfg = write_config(
        dir.path(),
        "fig1.json",
        &format!(
            r#"{{"experiment":"portrait","system":"harmonic","output":"{out_stem}",
                "parameters":{{"m":1,"omega":1,"E_levels":[0.5,1,2]}}}}"#
        ),
    );
    let out = ergolab(&["portrait", "--config", cfg.to_str().unwrap(), "--check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read(format!("{out_stem}.csv")).unwrap();
    let svg = fs::read(format!("{out_stem}.svg")).unwrap();
    let manifest_path = format!("{out_stem}.manifest.json");
    let manifest: Value = serde_json::from_slice(&fs::read(&manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["artifact_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["check"], true);
    assert_eq!(manifest["outputs"]["fig1.csv"], ergolab::cli::sha256_hex(&csv));
    assert_eq!(manifest["outputs"]["fig1.svg"], ergolab::cli::sha256_hex(&svg));
    let header = String::from_utf8_lossy(&csv).lines().next().unwrap().to_string();
    assert_eq!(header, "orbit,energy_level,t,q1,p1,H");
    assert_eq!(String::from_utf8_lossy(&svg).matches("<polyline").count(), 3);

    // the manifest itself is a valid config; rerunning reproduces the bytes
    let rerun_stem = stem(dir.path(), "rerun");
    let out = ergolab(&["portrait", "--config", &manifest_path, "--output", &rerun_stem]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(format!("{rerun_stem}.csv")).unwrap(), csv);
    assert_eq!(fs::read(format!("{rerun_stem}.svg")).unwrap(), svg);
    let rerun: Value = serde_json::from_slice(&fs::read(format!("{rerun_stem}.manifest.json")).unwrap()).unwrap();
    assert_eq!(rerun["config"]["output"], rerun_stem.as_str());
}

#[test]
fn pendulum_portrait_uses_wrapped_angle() {
    let dir = tempfile::tempdir().unwrap();
    let out_stem = stem(dir.path(), "fig2");
    let cfg = write_config(
        dir.path(),
        "fig2.json",
        &format!(r#"{{"experiment":"portrait","system":"pendulum","output":"{out_stem}","parameters":{{"E-levels":[1,2,3]}}}}"#),
    );
    let out = ergolab(&["portrait", "--config", cfg.to_str().unwrap(), "--check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(format!("{out_stem}.csv")).unwrap();
    assert!(csv.starts_with("orbit,energy_level,t,q1,p1,H,q1_wrapped\n"));
    for line in csv.lines().skip(1) {
        let wrapped: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(wrapped > -std::f64::consts::PI && wrapped <= std::f64::consts::PI);
    }
}

#[test]
fn damped_liouville_row() {
    let dir = tempfile::tempdir().unwrap();
    let out_stem = stem(dir.path(), "damped");
    let cfg = write_config(
        dir.path(),
        "damped.json",
        &format!(r#"{{"experiment":"liouville","system":"damped","output":"{out_stem}","parameters":{{"gamma":0.5,"t_final":2}}}}"#),
    );
    let out = ergolab(&["liouville", "--config", cfg.to_str().unwrap(), "--check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(format!("{out_stem}.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,det_var,det_liou,reference"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(row[3], (-1.0f64).exp());
    assert!((row[1] - row[3]).abs() < 1e-6 && (row[2] - row[3]).abs() < 1e-6);
    assert!(!Path::new(&format!("{out_stem}.svg")).exists());
}

#[test]
fn unknown_parameter_exits_two_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_stem = stem(dir.path(), "bad");
    let cfg = write_config(
        dir.path(),
        "bad.json",
        &format!(r#"{{"experiment":"portrait","system":"harmonic","output":"{out_stem}","parameters":{{"mass":2}}}}"#),
    );
    let out = ergolab(&["portrait", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(diagnostic(&out)["message"].as_str().unwrap().contains("mass"));
    assert!(!Path::new(&format!("{out_stem}.csv")).exists());
}

#[test]
fn invalid_values_and_mismatches_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_stem = stem(dir.path(), "x");
    let cases = [
        ("portrait", r#"{"omega":-1}"#),
        ("portrait", r#"{"E_levels":[]}"#),
        ("portrait", r#"{"dt":1e-3,"t_final":0}"#),
        ("simulate", r#"{"dt":"fast"}"#),
    ];
    for (i, (exp, params)) in cases.iter().enumerate() {
        let cfg = write_config(
            dir.path(),
            &format!("c{i}.json"),
            &format!(r#"{{"experiment":"{exp}","system":"harmonic","output":"{out_stem}","parameters":{params}}}"#),
        );
        let out = ergolab(&[exp, "--config", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{params}");
    }
    let cfg = write_config(
        dir.path(),
        "mismatch.json",
        &format!(r#"{{"experiment":"volume","system":"harmonic","output":"{out_stem}"}}"#),
    );
    let out = ergolab(&["portrait", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    // portraits take no seed
    let cfg = write_config(
        dir.path(),
        "seed.json",
        &format!(r#"{{"experiment":"portrait","system":"harmonic","output":"{out_stem}"}}"#),
    );
    let out = ergolab(&["portrait", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ergolab(&["portrait", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn blow_up_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out_stem = stem(dir.path(), "blow");
    let cfg = write_config(
        dir.path(),
        "blow.json",
        &format!(
            r#"{{"experiment":"simulate","system":"custom-polynomial","output":"{out_stem}",
                "parameters":{{"coefficients":[0,0,0,1],"q0":-2,"p0":-5,"t_final":10}}}}"#
        ),
    );
    let out = ergolab(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(diagnostic(&out)["kind"], "numerical");
}

#[test]
fn failed_check_exits_four_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out_stem = stem(dir.path(), "strict");
    let cfg = write_config(
        dir.path(),
        "strict.json",
        &format!(
            r#"{{"experiment":"simulate","system":"pendulum","output":"{out_stem}",
                "parameters":{{"scheme":"symplectic_euler","dt":0.05,"t_final":5,"tolerance":1e-12}}}}"#
        ),
    );
    let args = ["simulate", "--config", cfg.to_str().unwrap()];
    assert!(ergolab(&args).status.success(), "no --check, no threshold");
    let out = ergolab(&[args.as_slice(), &["--check"]].concat());
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(diagnostic(&out)["kind"], "check");
    let manifest: Value = serde_json::from_slice(&fs::read(format!("{out_stem}.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["check"], false);
}

#[test]
fn seed_override_is_echoed_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = stem(dir.path(), "a");
    let b = stem(dir.path(), "b");
    let cfg = write_config(
        dir.path(),
        "rec.json",
        &format!(r#"{{"experiment":"recurrence","system":"rotation","output":"{a}","parameters":{{"n_points":100}}}}"#),
    );
    let cfg = cfg.to_str().unwrap();
    assert!(ergolab(&["recurrence", "--config", cfg, "--seed", "9", "--check"]).status.success());
    assert!(ergolab(&["recurrence", "--config", cfg, "--seed", "9", "--output", &b]).status.success());
    assert_eq!(fs::read(format!("{a}.csv")).unwrap(), fs::read(format!("{b}.csv")).unwrap());
    let manifest: Value = serde_json::from_slice(&fs::read(format!("{a}.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["parameters"]["seed"], 9);
    let csv = fs::read_to_string(format!("{a}.csv")).unwrap();
    assert!(csv.starts_with("index,x1,first_return,return_count,horizon\n"));
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn every_supported_pair_runs_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for spec in ergolab::cli::system_registry() {
        for exp in &spec.experiments {
            let mut config = serde_json::json!({
                "experiment": exp,
                "system": spec.key,
                "output": stem(dir.path(), &format!("{}-{}", spec.key, exp)),
            });
            // keep the Monte Carlo runs short
            if matches!(exp.name(), "volume" | "invariance") {
                config["parameters"] = serde_json::json!({"n_samples": 100000, "grid": 200});
            }
            let cfg = write_config(dir.path(), &format!("{}-{}.json", spec.key, exp), &config.to_string());
            let out = ergolab(&[exp.name(), "--config", cfg.to_str().unwrap(), "--check"]);
            assert!(
                out.status.success(),
                "{} on {}: {}",
                exp,
                spec.key,
                String::from_utf8_lossy(&out.stderr)
            );
        }
    }
}
