use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab")).args(args).env("LAB_THREADS", "1").output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn write_config(dir: &Path, rule: &str, n: usize) -> String {
    let p = dir.join("c.toml");
    fs::write(
        &p,
        format!(
            r#"name = "cli"
out_dir = "{}"
rule = "{rule}"
[dataset]
n = {n}
[model]
kind = "empirical"
[eval]
seeds = 128
held_out = 16
cube = 16
[dissect.basin]
anchors = 4
resamples = 100
"#,
            dir.join("run").display()
        ),
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn train_report_clocks_and_dissect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "parity:d=12,g=2", 32);
    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();

    let o = lab(&["gen", "--config", &cfg]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(run.join("dataset.csv").exists());

    let o = lab(&["train", "--config", &cfg]);
    assert!(o.status.success(), "{}", text(&o));
    let o = lab(&["train", "--config", &cfg]);
    assert!(text(&o).contains("skipped"));

    let o = lab(&["train", "--config", &cfg, "--set", "master_seed=3"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));

    let o = lab(&["report", "--run", run_s]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("0 mismatched"));

    let o = lab(&["clocks", "--runs", run_s, "--out", tmp.path().join("clocks.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(tmp.path().join("clocks.json").exists());

    let o = lab(&["eval", "--run", run_s]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(text(&o).lines().count(), 2);

    // A single analytic checkpoint has no transitions to count.
    let o = lab(&["dissect", "raster", "--run", run_s]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    let o = lab(&["dissect", "basin", "--run", run_s, "--anchors", "2", "--direction", "hamming1Invalid"]);
    assert!(o.status.success(), "{}", text(&o));
    let o = lab(&["dissect", "field", "--run", run_s, "--sigma", "0.5"]);
    assert!(o.status.success(), "{}", text(&o));
}

#[test]
fn raster_windows() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("raster.csv"), "step,seed_0,seed_1\n10,0,1\n20,1,3\n40,3,3\n").unwrap();
    let o = lab(&["dissect", "raster", "--run", tmp.path().to_str().unwrap(), "--window", "early:10:10", "--window", "late:20:40"]);
    assert!(o.status.success(), "{}", text(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[0]["counts"][0][1], 1);
    assert_eq!(v[1]["counts"][1][3], 1);
    assert_eq!(v[1]["counts"][3][3], 1);
}

#[test]
fn fit_reads_points() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("pts.csv");
    let rows: String = [32.0f64, 64.0, 128.0]
        .iter()
        .map(|n| format!("{n},{}\n", 35.0 * n.powf(1.14)))
        .collect();
    fs::write(&p, format!("n,tau\n{rows}")).unwrap();
    let o = lab(&["fit", "--points", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["alpha"].as_f64().unwrap() - 1.14).abs() < 1e-9);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_rule = write_config(tmp.path(), "parity:d=12,g=5", 32);
    assert_eq!(lab(&["train", "--config", &bad_rule]).status.code(), Some(2));

    let too_many = write_config(tmp.path(), "parity:d=12,g=2", 1000);
    let o = lab(&["train", "--config", &too_many]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));

    let o = Command::new(env!("CARGO_BIN_EXE_lab"))
        .args(["fit", "--points", "x.csv"])
        .env("LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
