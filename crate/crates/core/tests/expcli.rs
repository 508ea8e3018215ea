use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lab_core::expcli::*;
use lab_core::Error;

fn smoke_toml(out: &Path) -> String {
    format!(
        r#"
name = "smoke"
out_dir = "{}"
master_seed = 7
rule = "parity:d=12,g=2"

[dataset]
n = 32

[model]
kind = "empirical"

[eval]
seeds = 256
held_out = 16
cube = 16

[dissect.spectrum]
repeats = 2

[dissect.field]
sigmas = [0.5]

[dissect.basin]
anchors = 8
resamples = 200
"#,
        out.display()
    )
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            walk(&p, out);
        } else {
            out.push(p);
        }
    }
}

#[test]
fn empirical_smoke_run_is_complete_and_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = ExperimentConfig::from_toml_str(&smoke_toml(&out)).unwrap();
    let t0 = Instant::now();
    let first = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert!(t0.elapsed().as_secs() < 60);
    assert!(!first.skipped && first.manifest.is_complete());

    let snaps = read_snapshots(&out.join(SNAPSHOTS_FILE)).unwrap();
    assert_eq!(snaps.len(), 1);
    assert!(snaps[0].sample_mem > 0.99, "sampleMem {}", snaps[0].sample_mem);

    let mut files = Vec::new();
    walk(&out, &mut files);
    let listed: Vec<&str> = first.manifest.files.iter().map(|f| f.path.as_str()).collect();
    for f in &files {
        let rel = f.strip_prefix(&out).unwrap().to_string_lossy().replace('\\', "/");
        if rel != MANIFEST_FILE {
            assert!(listed.contains(&rel.as_str()), "{rel} missing from manifest");
        }
    }
    assert!(first.manifest.verify(&out).unwrap().is_empty());
    for name in ["spectrum.csv", "basin.csv", "clocks.json", "raster.csv", "dataset.csv", "field/field_00.json"] {
        assert!(first.manifest.file(name).is_some(), "{name}");
    }

    let again = run_experiment(&cfg, &RunOptions::default()).unwrap();
    assert!(again.skipped);
    assert_eq!(again.manifest, first.manifest);

    let forced = run_experiment(&cfg, &RunOptions { force: true }).unwrap();
    assert!(!forced.skipped);
    let hashes = |m: &RunManifest| m.files.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect::<Vec<_>>();
    assert_eq!(hashes(&forced.manifest), hashes(&first.manifest));
}

#[test]
fn invalid_rule_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let text = smoke_toml(&tmp.path().join("x")).replace("parity:d=12,g=2", "parity:d=12,g=5");
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    match run_experiment(&cfg, &RunOptions::default()) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "rule"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn includes_merge_with_override() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("base.toml"), smoke_toml(&tmp.path().join("b"))).unwrap();
    fs::write(
        tmp.path().join("child.toml"),
        "include = \"base.toml\"\nmaster_seed = 9\n[dataset]\nn = 16\n",
    )
    .unwrap();
    let c = ExperimentConfig::load(&tmp.path().join("child.toml")).unwrap();
    assert_eq!(c.master_seed, 9);
    assert_eq!(c.dataset.n, 16);
    assert_eq!(c.eval.seeds, 256);
    assert_eq!(c.rule, "parity:d=12,g=2");

    fs::write(tmp.path().join("loop.toml"), "include = \"loop.toml\"\n").unwrap();
    assert!(ExperimentConfig::load(&tmp.path().join("loop.toml")).is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let tmp = tempfile::tempdir().unwrap();
    let c = ExperimentConfig::from_toml_str(&smoke_toml(&tmp.path().join("r"))).unwrap();
    let back = ExperimentConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
}

#[test]
fn seed_sweep_gives_distinct_hashes_and_single_value_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::from_toml_str(&smoke_toml(&tmp.path().join("sw"))).unwrap();
    let (key, vals) = parse_axis("master_seed=0,1,2").unwrap();
    let s = sweep(&base, &key, &vals, &RunOptions::default()).unwrap();
    assert_eq!(s.rows.len(), 3);
    let mut hashes: Vec<String> = s.rows.iter().map(|r| r.config_hash.clone().unwrap()).collect();
    hashes.dedup();
    assert_eq!(hashes.len(), 3);
    assert!(tmp.path().join("sw/sweep.csv").exists());

    let (key, vals) = parse_axis("master_seed=4").unwrap();
    let one = sweep_configs(&base, &key, &vals).unwrap().remove(0);
    let direct = ExperimentConfig {
        master_seed: 4,
        ..base.clone()
    };
    assert_eq!(one.hash(), direct.hash());
}

#[test]
fn sweep_isolates_member_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::from_toml_str(&smoke_toml(&tmp.path().join("fail"))).unwrap();
    let (key, vals) = parse_axis("dataset.n=16,1000").unwrap();
    let s = sweep(&base, &key, &vals, &RunOptions::default()).unwrap();
    assert!(s.rows[0].ok && s.rows[0].config_hash.is_some());
    assert!(!s.rows[1].ok);
    assert!(s.rows[1].error.as_deref().unwrap().contains("gen"));
    let m = RunManifest::read(&s.rows[1].out_dir).unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert_eq!(m.failed_stage.as_deref(), Some("gen"));
    assert!(RunManifest::read(&s.rows[0].out_dir).unwrap().is_complete());
}

#[test]
fn derived_seeds_differ_per_stage() {
    let a = derive_seed(0, stage::DATASET);
    let b = derive_seed(0, stage::TRAIN);
    assert_ne!(a, b);
    assert_eq!(a, derive_seed(0, stage::DATASET));
    assert_ne!(a, derive_seed(1, stage::DATASET));
}
