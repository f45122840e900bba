use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use selclust::harness::separated_truth;
use selclust::model::sample_mixture;
use selclust::rng;

fn selclust(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selclust")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = selclust(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write_data(dir: &Path, n: usize) -> String {
    let theta = separated_truth(2, 2, 3.0).unwrap();
    let (_, data) = sample_mixture(&theta, n, &mut rng::stream(1, &[0]));
    let path = dir.join("data.csv");
    data.write_csv(&path).unwrap();
    path.to_string_lossy().into_owned()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn fit_then_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 200);
    let params = p(dir.path(), "params.json");
    ok(&["fit", "--data", &data, "--q", "2", "--structure", "diagonal", "--starts", "2", "--out", &params]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&params).unwrap()).unwrap();
    assert_eq!(json["weights"].as_array().unwrap().len(), 2);

    let labels = p(dir.path(), "labels.csv");
    ok(&["cluster", "--data", &data, "--params", &params, "--alpha", "0.1", "--out", &labels]);
    let text = fs::read_to_string(&labels).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "item_index,map_label,selected,t_value");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|r| r[1] == "1" || r[1] == "2"));
    let picked = rows.iter().filter(|r| r[2] == "1").count();
    assert!(picked > 100);

    let fixed = p(dir.path(), "fixed.csv");
    ok(&["cluster", "--data", &data, "--params", &params, "--alpha", "0.1", "--rule", "fixed", "--out", &fixed]);
    let fixed_rows = fs::read_to_string(&fixed).unwrap();
    let fixed_picked = fixed_rows.lines().skip(1).filter(|l| l.split(',').nth(2) == Some("1")).count();
    assert!(fixed_picked <= picked);
}

#[test]
fn calibrate_writes_report_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), 150);
    let out = p(dir.path(), "report");
    ok(&[
        "calibrate",
        "--data",
        &data,
        "--q",
        "2",
        "--alpha",
        "0.1",
        "--b",
        "30",
        "--structure",
        "diagonal",
        "--out",
        &out,
    ]);
    for name in ["params.json", "curve.csv", "labels.csv", "report.txt"] {
        assert!(dir.path().join("report").join(name).exists(), "{name}");
    }
    let curve = fs::read_to_string(dir.path().join("report/curve.csv")).unwrap();
    assert!(curve.lines().count() > 2);
}

#[test]
fn oracle_curve_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let params = p(dir.path(), "truth.json");
    separated_truth(2, 2, 2.0).unwrap().write_json(&params).unwrap();
    let csv = ok(&["oracle-curve", "--params", &params, "--alpha", "0.1", "--mc-size", "20000"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,mfcr,standard_error,mc_size");
    let values: Vec<(f64, f64)> = lines
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            (f[0], f[1])
        })
        .collect();
    assert_eq!(values.len(), 100);
    assert!(values.iter().all(|&(t, m)| m < t));
}

#[test]
fn simulate_from_json_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"name":"tiny","truth":{"kind":"separated","q":2,"d":2},"epsilon":2.0,"n":80,"reps":2,
        "procedures":["oracle","plug_in","fixed_baseline"],
        "sweeps":[{"label":"eps","parameter":"epsilon","values":[1.0,2.0]}],
        "alpha":0.1,"em":{"n_starts":2,"constraint":{"structure":"spherical"}},"seed":5}"#;
    let cfg_path = p(dir.path(), "tiny.json");
    fs::write(&cfg_path, cfg).unwrap();
    let out = p(dir.path(), "out");
    let listed = ok(&["simulate", "--scenario", &cfg_path, "--out", &out]);
    assert!(listed.contains("results.csv"));
    for name in ["results.csv", "replications.csv", "tiny_eps.svg", "manifest.json", "config.json"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
    let first = fs::read(dir.path().join("out/results.csv")).unwrap();
    let out2 = p(dir.path(), "out2");
    ok(&["simulate", "--scenario", &cfg_path, "--out", &out2]);
    assert_eq!(first, fs::read(dir.path().join("out2/results.csv")).unwrap());
}

#[test]
fn scenarios_lists_builtins() {
    let text = ok(&["scenarios"]);
    for name in ["known-params", "diagonal", "high-dim", "three-component", "unconstrained", "typical"] {
        assert!(text.contains(name), "{name}");
    }
    let json = ok(&["scenarios", "typical"]);
    assert!(json.contains("\"typical\""));
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        selclust(&["fit", "--data", &p(dir.path(), "missing.csv"), "--q", "2", "--out", &p(dir.path(), "x.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let data = write_data(dir.path(), 50);
    let params = p(dir.path(), "params.json");
    ok(&["fit", "--data", &data, "--q", "2", "--starts", "1", "--out", &params]);
    let out = selclust(&[
        "cluster",
        "--data",
        &data,
        "--params",
        &params,
        "--alpha",
        "1.5",
        "--out",
        &p(dir.path(), "l.csv"),
    ]);
    assert!(!out.status.success());

    let out = selclust(&["simulate", "--scenario", "no-such-scenario", "--out", &p(dir.path(), "o")]);
    assert!(!out.status.success());
}
