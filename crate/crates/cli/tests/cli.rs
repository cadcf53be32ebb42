use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use synaudit::generator::{baseline_synthesize, SamplerMode};
use synaudit::toy::correlated_toy;

fn synaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synaudit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_pair(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let real = correlated_toy(n, 5);
    let syn = baseline_synthesize(&real, SamplerMode::Independent, n, 5).unwrap();
    let (rp, sp) = (dir.join("real.csv"), dir.join("synthetic.csv"));
    real.save_csv(&rp).unwrap();
    syn.save_csv(&sp).unwrap();
    (rp, sp)
}

const QUICK_AUDIT: &str = r#"{
  "replications": 2,
  "tune": false,
  "train": { "n_trees": 40 },
  "pfi": { "repeats": 2 },
  "shap_rows": 60,
  "effects": { "resolution": 7, "instance_sample": 150, "plot_sample": 30 },
  "n_explain": 1,
  "n_imputations": 6,
  "background_rows": 30,
  "explain": { "n_coalitions": 150 },
  "n_counterfactual": 1,
  "counterfactual": { "n_samples": 800 }
}"#;

#[test]
fn synthesize_independent_writes_a_csv_with_the_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (real, _) = write_pair(dir.path(), 400);
    let out = dir.path().join("baseline.csv");
    let o = synaudit(&["synthesize", "--real", s(&real), "--mode", "independent", "-n", "1000", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "age,edu,x1,x2,group,x3,noise");
    assert_eq!(lines.count(), 1000);
}

#[test]
fn unknown_flag_exits_two_with_usage() {
    let o = synaudit(&["train", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn validation_errors_exit_two_and_bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (real, _) = write_pair(dir.path(), 200);
    let missing = dir.path().join("nope.csv");
    let o = synaudit(&["train", "--real", s(&real), "--synthetic", s(&missing), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{ "replicashuns": 3 }"#).unwrap();
    let o = synaudit(&[
        "audit", "--real", s(&real), "--synthetic", s(&real), "--config", s(&cfg), "--out", s(&dir.path().join("a")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_then_analyse_one_model() {
    let dir = tempfile::tempdir().unwrap();
    let (real, syn) = write_pair(dir.path(), 600);
    let cfg = dir.path().join("train.json");
    std::fs::write(&cfg, r#"{ "n_trees": 40 }"#).unwrap();
    let m = dir.path().join("m");
    let o = synaudit(&["train", "--real", s(&real), "--synthetic", s(&syn), "--config", s(&cfg), "--out", s(&m)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(m.join("model.json").is_file() && m.join("metrics.json").is_file());

    let model = m.join("model.json");
    let common = ["--model", s(&model), "--real", s(&real), "--synthetic", s(&syn)];
    let run = |sub: &str, extra: &[&str], out: &Path| {
        let mut args = vec![sub];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", s(out)]);
        let o = synaudit(&args);
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
    };
    let imp = dir.path().join("imp");
    run("importance", &["--method", "pfi", "--repeats", "2"], &imp);
    assert!(imp.join("importance.svg").is_file());
    run("importance", &["--method", "interactions", "--rows", "30"], &imp);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(imp.join("importance.json")).unwrap()).unwrap();
    assert_eq!(report["entries"][0]["features"].as_array().unwrap().len(), 2);

    let eff = dir.path().join("eff");
    run("effects", &["--feature", "age", "--resolution", "9"], &eff);
    let effect: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eff.join("effect_age.json")).unwrap()).unwrap();
    assert_eq!(effect["pdp"].as_array().unwrap().len(), 9);
    run("effects", &["--feature", "group"], &eff);
    assert!(eff.join("classes_group.json").is_file());

    let sh = dir.path().join("sh");
    run("shapley", &["--row", "0", "--engine", "tree", "exact"], &sh);
    assert!(sh.join("explanation_0.json").is_file() && sh.join("waterfall_0.svg").is_file());

    let cf = dir.path().join("cf");
    run("counterfactual", &["--row", "1", "--samples", "500"], &cf);
    assert!(cf.join("counterfactuals_1.json").is_file());
}

#[test]
fn audit_config_reaches_the_report_and_report_rerenders_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (real, syn) = write_pair(dir.path(), 800);
    let cfg = dir.path().join("audit.json");
    std::fs::write(&cfg, QUICK_AUDIT).unwrap();
    let out = dir.path().join("audit");
    let o = synaudit(&[
        "audit", "--seed", "11", "--config", s(&cfg), "--real", s(&real), "--synthetic", s(&syn), "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["run"]["config"]["seed"], 11);
    assert_eq!(report["run"]["config"]["effects"]["resolution"], 7);
    let age = report["effects"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["effect"]["grid"]["feature"] == "age")
        .unwrap();
    assert_eq!(age["effect"]["pdp"].as_array().unwrap().len(), 7);

    let again = dir.path().join("again");
    let o = synaudit(&["report", "--report", s(&out.join("report.json")), "--out", s(&again)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let figures = report["figures"].as_array().unwrap();
    assert!(!figures.is_empty());
    for f in figures {
        let file = f["file"].as_str().unwrap();
        assert_eq!(
            std::fs::read(out.join(file)).unwrap(),
            std::fs::read(again.join(file)).unwrap(),
            "{file} differs after re-rendering"
        );
    }
}
