use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn platoon(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platoon"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn run_preset_applies_the_myerson_rule() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&platoon(&["auction-run", "--preset", "myerson-uniform", "--bids", "0.8,0.6"], dir.path()));
    assert_eq!(v["winner"], 0);
    assert!((v["payments"][0].as_f64().unwrap() - 0.6).abs() < 1e-12);
    let v = json(&platoon(&["auction-run", "--preset", "myerson-uniform", "--bids", "0.8,0.2"], dir.path()));
    assert!((v["payments"][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let v = json(&platoon(&["auction-run", "--preset", "myerson-uniform", "--bids", "0.4,0.3"], dir.path()));
    assert!(v["winner"].is_null());
    assert_eq!(v["revenue"], 0.0);
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let bad_bids = platoon(&["auction-run", "--preset", "identity", "--bids", "0.8,x"], p);
    assert_eq!(bad_bids.status.code(), Some(2));
    let missing = platoon(&["auction-train", "--config", "nope.json", "--out", "a.json"], p);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.json"));
    std::fs::write(p.join("broken.json"), "{\"kind\": \"myerson\", \"version\": 1").unwrap();
    for cmd in [
        vec!["auction-eval", "--model", "broken.json"],
        vec!["cost", "--model", "broken.json"],
        vec!["marl-eval", "--policy", "broken.json"],
    ] {
        assert_eq!(platoon(&cmd, p).status.code(), Some(2), "{cmd:?}");
    }
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = platoon(
        &["auction-train", "--out", "a.json", "--iterations", "50", "--learning-rate", "1e300"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn audit_spa_is_truthful() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&platoon(&["auction-audit", "--mechanism", "spa"], dir.path()));
    assert!(v["ic_regret"].as_f64().unwrap() <= 0.01);
    assert_eq!(v["ir_rate"], 0.0);
    assert_eq!(v["samples"], 1_000_000);
}

#[test]
fn myerson_over_spa_revenue_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let m = json(&platoon(&["auction-eval", "--mechanism", "myerson", "--bidders", "2"], dir.path()));
    let s = json(&platoon(&["auction-eval", "--mechanism", "spa", "--bidders", "2", "--seed", "1"], dir.path()));
    let (rm, sm) = (m["revenue"].as_f64().unwrap(), m["stderr"].as_f64().unwrap());
    let (rs, ss) = (s["revenue"].as_f64().unwrap(), s["stderr"].as_f64().unwrap());
    let ratio = rm / rs;
    // delta-method standard error of the ratio
    let se = ratio * ((sm / rm).powi(2) + (ss / rs).powi(2)).sqrt();
    assert!((ratio - 1.25).abs() < 4.0 * se, "ratio {ratio} +- {se}");
}

#[test]
fn train_outputs_and_degenerate_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("cfg.json"), r#"{"n_bidders": 2, "iterations": 0}"#).unwrap();
    let out = platoon(&["auction-train", "--config", "cfg.json", "--out", "a.json", "--metrics", "m.csv"], p);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(p.join("m.csv")).unwrap(), "iter,loss,revenue_hard,seconds\n");
    let ck: Value = serde_json::from_str(&std::fs::read_to_string(p.join("a.json")).unwrap()).unwrap();
    assert_eq!(ck["kind"], "myerson");
    assert_eq!(ck["version"], 1);
    assert_eq!(ck["N"], 2);
    assert_eq!(ck["train_config"]["iterations"], 0);
    assert!(ck["tool_version"].is_string());
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(p.join("m.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 0);

    // flags override the file
    let out = platoon(
        &["auction-train", "--config", "cfg.json", "--iterations", "3", "--seed", "5", "--out", "b.json", "--metrics", "n.csv"],
        p,
    );
    assert!(out.status.success());
    let body = std::fs::read_to_string(p.join("n.csv")).unwrap();
    assert_eq!(body.lines().count(), 4);
    let ck: Value = serde_json::from_str(&std::fs::read_to_string(p.join("b.json")).unwrap()).unwrap();
    assert_eq!(ck["seed"], 5);
}

#[test]
fn cost_reports_hand_counts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("tiny.json"),
        r#"{"kind":"myerson","version":1,"tool_version":"0","shared":true,"N":1,"K":1,"J":1,
            "alpha":[[0.0]],"beta":[[0.0]],"train_config":null,"seed":0}"#,
    )
    .unwrap();
    let v = json(&platoon(&["cost", "--model", "tiny.json"], p));
    assert_eq!(v["cost"]["macs"], 1);
    assert_eq!(v["cost"]["comparisons"], 0);

    let mut totals = Vec::new();
    for layers in ["2", "4"] {
        let name = format!("p{layers}.json");
        let out = platoon(&["marl-train", "--episodes", "0", "--layers", layers, "--out", &name], p);
        assert!(out.status.success());
        let v = json(&platoon(&["cost", "--model", &name], p));
        let stack: u64 = v["cost"]["layers"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|l| l["name"].as_str().unwrap().starts_with("layer"))
            .map(|l| l["macs"].as_u64().unwrap())
            .sum();
        totals.push(stack);
    }
    assert_eq!(totals[1], 2 * totals[0]);
}

#[test]
fn marl_eval_render_and_compatibility() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = platoon(&["marl-train", "--episodes", "64", "--out", "pol.json", "--metrics", "m.csv"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(p.join("m.csv")).unwrap();
    assert!(csv.starts_with("episode,return,loss\n"));
    assert_eq!(csv.lines().count(), 65);

    let a = platoon(&["marl-eval", "--policy", "pol.json", "--seed", "4"], p);
    let b = platoon(&["marl-eval", "--policy", "pol.json", "--seed", "4"], p);
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["optimum"], 8);
    assert_eq!(v["episodes"], 100);

    std::fs::write(
        p.join("h1.json"),
        r#"{"kind":"coverage","W":5,"H":5,"users":[[0,0],[4,4]],"agents":2,"radius":1,"horizon":1}"#,
    )
    .unwrap();
    let out = platoon(&["marl-eval", "--policy", "pol.json", "--env", "h1.json", "--episodes", "1", "--render"], p);
    assert!(out.status.success());
    let frames = String::from_utf8_lossy(&out.stderr).lines().filter(|l| l.starts_with("t=")).count();
    assert_eq!(frames, 2);

    std::fs::write(
        p.join("three.json"),
        r#"{"kind":"coverage","W":5,"H":5,"users":[],"agents":3,"radius":1,"horizon":2}"#,
    )
    .unwrap();
    let out = platoon(&["marl-eval", "--policy", "pol.json", "--env", "three.json"], p);
    assert_eq!(out.status.code(), Some(2));
}
