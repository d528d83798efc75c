use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gwsand(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwsand")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn verify_abelian_passes() {
    let o = gwsand(&["verify", "--suite", "abelian", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("abelian PASS"), "{text}");
}

#[test]
fn binary_conductance_is_one() {
    let o = gwsand(&["conductance", "--dist", "explicit:0,0,1", "--depth", "60"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let (lo, hi) = (v["lo"].as_f64().unwrap(), v["hi"].as_f64().unwrap());
    assert!(lo <= 1.0 && 1.0 <= hi && hi - lo < 1e-9, "{v}");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&gwsand(&["tail", "--dist", "explicit:0.25,0,0.75", "--bogus"])), 2);
    assert_eq!(code(&gwsand(&["tail", "--dist", "nonsense"])), 2);
    assert_eq!(code(&gwsand(&["verify", "--suite", "nope"])), 2);
    assert_eq!(code(&gwsand(&["frobnicate"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(code(&gwsand(&["verify", "--config", cfg.to_str().unwrap()])), 2);
}

fn small_tail(out: &Path, threads: &str) -> Output {
    gwsand(&[
        "tail", "--dist", "explicit:0.25,0,0.75", "--mode", "annealed", "--samples", "96", "--seed", "3", "--depth",
        "8", "--max-doublings", "2", "--cluster-cap", "2000", "--bootstrap", "20", "--records", "--threads", threads,
        "--out", out.to_str().unwrap(),
    ])
}

#[test]
fn tail_outputs_do_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&small_tail(&a, "1")), 0);
    assert_eq!(code(&small_tail(&b, "3")), 0);
    for f in ["tail.csv", "tail_av.csv", "tail_w1.csv", "tail_N.csv", "fit.json", "records.csv"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let tail = std::fs::read_to_string(a.join("tail.csv")).unwrap();
    assert!(tail.starts_with("t,survival,stderr,censored_lo,censored_hi\n"));
    let m = read_json(&a.join("manifest.json"));
    assert_eq!(m["command"], "tail");
    assert_eq!(m["counters"]["samples"], 96);
    assert_eq!(m["config"]["dist"], "explicit:0.25,0,0.75");
    assert_eq!(m["threads"], 1);
    let records = std::fs::read_to_string(a.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 97);
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"dist": "explicit:0,0,1", "samples": 50, "depth": 6, "tree_seed": 4}"#).unwrap();
    let out = dir.path().join("o");
    let o = gwsand(&["waves", "--config", cfg.to_str().unwrap(), "--samples", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["config"]["samples"], 7);
    assert_eq!(m["config"]["depth"], 6);
    assert_eq!(m["config"]["tree_seed"], 4);
    let waves = std::fs::read_to_string(out.join("waves.csv")).unwrap();
    assert!(waves.starts_with("sample_id,wave,size\n"));
    assert_eq!(std::fs::read_to_string(out.join("records.csv")).unwrap().lines().count(), 8);
}

#[test]
fn wsf_writes_tail_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    let o = gwsand(&["wsf", "--samples", "500", "--trace", "3", "--bootstrap", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("sample,step,edge,Clo,Chi,decision,M,increment,D\n"));
    assert!(trace.lines().count() > 3);
    assert!(out.join("tail.csv").exists() && out.join("fit.json").exists());
}

#[test]
fn flagged_invalid_runs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    // Every component hits the step cap, so the run is flagged invalid.
    let o = gwsand(&["wsf", "--samples", "200", "--step-cap", "1", "--bootstrap", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert_eq!(read_json(&out.join("manifest.json"))["valid"], false);
}

#[test]
fn gen_tree_dumps_the_ball() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = gwsand(&["gen-tree", "--dist", "explicit:0.25,0,0.75", "--depth", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let dump = std::fs::read_to_string(out.join("tree.txt")).unwrap();
    assert!(dump.lines().nth(1).unwrap().starts_with("0 -1 0 1 "));
    let t = read_json(&out.join("tree.json"));
    assert!(t["ball_size"].as_u64().unwrap() >= 6);
}
