use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn conevex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conevex")).args(args).env("CONEVEX_THREADS", "2").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = conevex(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn header(path: &Path) -> Value {
    let text = fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

fn lattice_instance(dir: &Path) -> PathBuf {
    lattice_instance_with(dir, 2)
}

fn lattice_instance_with(dir: &Path, word_bound: usize) -> PathBuf {
    let p = dir.join(format!("lattice{word_bound}.json"));
    ok(&["instance", "--kind", "simplicial-lattice-coboundary", "--word-bound", &word_bound.to_string(), "--out", p.to_str().unwrap()]);
    p
}

#[test]
fn instance_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.json");
    ok(&["instance", "--kind", "quadratic", "--out", q.to_str().unwrap()]);
    let text = fs::read_to_string(&q).unwrap();
    let spec: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(spec["group"]["generators"].as_array().map_or(0, |g| g.len()), 0);

    let s = dir.path().join("s.json");
    ok(&["instance", "--kind", "simplicial-lattice-coboundary", "--eigenvalues", "2,1,0.5", "--v", "1,0,0", "--out", s.to_str().unwrap()]);
    let text = fs::read_to_string(&s).unwrap();
    let spec: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(spec["group"]["generators"].as_array().unwrap().len(), 1);

    let bad = conevex(&["instance", "--kind", "simplicial-lattice-coboundary", "--eigenvalues", "2,2,1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn headers_and_reproducible_payloads() {
    let dir = tempfile::tempdir().unwrap();
    let inst = lattice_instance(dir.path());
    let inst = inst.to_str().unwrap();
    let run = |name: &str| {
        let p = dir.path().join(name);
        ok(&["covolume", "--instance", inst, "--grid", "16", "--mc-samples", "2000", "--seed", "5", "--out", p.to_str().unwrap()]);
        p
    };
    let a = run("a.json");
    let b = run("b.json");
    let h = header(&a);
    for key in ["tool", "version", "instance_hash", "seed", "grid"] {
        assert!(h.get(key).is_some(), "header lacks {key}: {h}");
    }
    assert_eq!(h["seed"], 5);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let s1 = dir.path().join("s1.csv");
    let s2 = dir.path().join("s2.csv");
    for p in [&s1, &s2] {
        ok(&["sphere", "--instance", inst, "--grid", "33", "--out", p.to_str().unwrap()]);
    }
    assert!(header(&s1).get("instance_hash").is_some());
    assert_eq!(fs::read(&s1).unwrap(), fs::read(&s2).unwrap());
}

#[test]
fn sphere_diagnostics_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let inst = lattice_instance(dir.path());
    let runs = dir.path().join("runs");
    fs::create_dir(&runs).unwrap();
    let r = |f: &str| runs.join(f).to_str().unwrap().to_string();
    ok(&["sphere", "--instance", inst.to_str().unwrap(), "--grid", "33", "--out", &r("omega.csv"), "--diagnostics", &r("sphere.json")]);
    ok(&["minkowski", "--instance", inst.to_str().unwrap(), "--sigma-multiple", "0.25", "--grid", "16", "--out", &r("sol.csv"), "--trace", &r("trace.json"), "--residual", &r("res.csv")]);

    let rep = dir.path().join("rep");
    ok(&["report", "--dir", runs.to_str().unwrap(), "--out", rep.to_str().unwrap()]);
    let names: Vec<String> = fs::read_dir(&rep).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert!(names.iter().any(|n| n.starts_with("sphere-diagnostics")), "{names:?}");
    assert!(names.iter().any(|n| n.starts_with("minkowski-trace")), "{names:?}");
    assert!(names.iter().any(|n| n.starts_with("minkowski-residual")), "{names:?}");
}

#[test]
fn report_on_empty_dir_lists_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = conevex(&["report", "--dir", empty.to_str().unwrap(), "--out", dir.path().join("rep").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sphere") && err.contains("minkowski"), "{err}");
}

#[test]
fn body_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.json");
    ok(&["instance", "--kind", "quadratic", "--out", q.to_str().unwrap()]);
    let q = q.to_str().unwrap();
    let st = dir.path().join("steiner.json");
    ok(&["steiner", "--instance", q, "--grid", "65", "--offset", "0.5", "--out", st.to_str().unwrap()]);
    assert_eq!(header(&st)["kind"], "steiner");

    let cu = dir.path().join("phi.csv");
    ok(&["curvature", "--instance", q, "--grid", "65", "--offset", "1.0", "--out", cu.to_str().unwrap()]);
    let text = fs::read_to_string(&cu).unwrap();
    assert!(text.lines().count() > 2);

    let lat = lattice_instance_with(dir.path(), 6);
    let inv = dir.path().join("inv.json");
    ok(&["invariant", "--instance", lat.to_str().unwrap(), "--grid", "65", "--check-equivariance", "--samples", "200", "--dl-sample", "500", "--out", inv.to_str().unwrap()]);
    let text = fs::read_to_string(&inv).unwrap();
    let payload: Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
    assert!(payload["equivariance"]["max_excess"].as_f64().unwrap() <= 1e-6);
    assert!(payload["dl_covering"]["fraction"].as_f64().unwrap() >= 0.99);
}

#[test]
fn validation_and_nonconvergence_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = conevex(&["sphere", "--instance", dir.path().join("nope.json").to_str().unwrap(), "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let inst = lattice_instance(dir.path());
    let coarse = conevex(&["sphere", "--instance", inst.to_str().unwrap(), "--grid", "9", "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(coarse.status.code(), Some(2));

    let sol = dir.path().join("sol.csv");
    let stalled = conevex(&["minkowski", "--instance", inst.to_str().unwrap(), "--sigma-multiple", "0.25", "--grid", "16", "--init", "2.0", "--max-iter", "1", "--out", sol.to_str().unwrap()]);
    assert_eq!(stalled.status.code(), Some(3), "{}", String::from_utf8_lossy(&stalled.stderr));
}
