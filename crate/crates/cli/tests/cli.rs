//! End-to-end tests of the `hpred` binary.

use std::path::Path;
use std::process::{Command, Output};

fn hpred(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpred"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_default_scenario_twice_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = hpred(&["run", "--seed", "4", "--out", "a"], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = hpred(&["run", "--seed", "4", "--out", "b", "--mode", "parallel", "--workers", "2"], dir.path());
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    for f in ["metrics.json", "runlog.jsonl", "stacks.hplg"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, y, "{f} differs");
    }
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["seed"], 4);
    assert!(dir.path().join("a/timing.json").exists());
    for f in ["trajectories.csv", "events.csv", "layers.csv", "grid.json"] {
        assert!(dir.path().join("a/replay").join(f).exists(), "{f}");
    }

    let e = hpred(&["replay-export", "a", "--out", "again"], dir.path());
    assert_eq!(e.status.code(), Some(0), "{}", stderr(&e));
    let x = std::fs::read(dir.path().join("a/replay/trajectories.csv")).unwrap();
    let y = std::fs::read(dir.path().join("again/trajectories.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn malformed_scenario_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = hpred_cli::DEFAULT_SCENARIO.replace("v_max_mps = 1.1", "v_max_mps = 1.1\ntop_speed = 3.0");
    std::fs::write(dir.path().join("bad.toml"), text).unwrap();
    let o = hpred(&["run", "--scenario", "bad.toml", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("top_speed"), "{}", stderr(&o));

    let text = hpred_cli::DEFAULT_SCENARIO.replace("resolution_m = 0.1", "resolution_m = -0.1");
    std::fs::write(dir.path().join("neg.toml"), text).unwrap();
    let o = hpred(&["run", "--scenario", "neg.toml", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("resolution_m"), "{}", stderr(&o));

    let o = hpred(&["run", "--scenario", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hpred(&["launch"], dir.path()).status.code(), Some(2));
    assert_eq!(hpred(&["bench", "--mode=fast"], dir.path()).status.code(), Some(2));
    assert_eq!(hpred(&["run", "--seed", "x"], dir.path()).status.code(), Some(2));
}

#[test]
fn validate_passes_and_fails_on_a_zero_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = hpred(&["validate", "--out", "v"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).trim_end().ends_with("PASS"));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("v/validation.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);

    std::fs::write(dir.path().join("strict.toml"), "tv_bound = 0.0\n").unwrap();
    let o = hpred(&["validate", "--config", "strict.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    for k in 0..3 {
        assert!(out.contains(&format!("FAIL: layer {k}: tv")), "{out}");
    }
}

#[test]
fn bench_report_has_stable_structure() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("small.toml"),
        "samples = 512\nruns = 2\nsteps = [1, 2, 3]\nmulti_humans = 2\nmulti_steps = 2\n",
    )
    .unwrap();
    let mut shapes = Vec::new();
    for out in ["b1", "b2"] {
        let o = hpred(&["bench", "--config", "small.toml", "--workers", "2", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let r: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(out).join("bench.json")).unwrap()).unwrap();
        let rows: Vec<(u64, String, u64)> = r["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| {
                assert!(x["mean_s"].as_f64().unwrap() > 0.0);
                (
                    x["steps"].as_u64().unwrap(),
                    x["mode"].as_str().unwrap().to_string(),
                    x["workers"].as_u64().unwrap(),
                )
            })
            .collect();
        assert_eq!(rows.len(), 6);
        assert_eq!(r["speedups"].as_array().unwrap().len(), 3);
        assert_eq!(r["outputs_match"], true);
        assert!(dir.path().join(out).join("bench.txt").exists());
        shapes.push(rows);
    }
    assert_eq!(shapes[0], shapes[1]);

    let o = hpred(&["bench", "--config", "small.toml", "--mode", "serial"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(!stdout(&o).contains("parallel ("));
}
