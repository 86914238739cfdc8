//! The `kptk` binary driven end to end on small corpora.

use std::path::Path;
use std::process::{Command, Output};

fn kptk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kptk")).args(args).env("KPTK_LOG", "warn").output().expect("kptk runs")
}

fn ok(args: &[&str]) -> String {
    let out = kptk(args);
    assert!(out.status.success(), "kptk {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 3\n[tracking]\ngating_raduis = 10.0\n").unwrap();
    let out = kptk(&["--config", p(&cfg), "eval"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gating_raduis"), "{err}");
}

#[test]
fn invalid_values_are_rejected_before_running() {
    let out = kptk(&["bench", "--data", "/nonexistent", "--threshold", "1.5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("tracking.threshold"));
    let out = kptk(&["simulate", "--kind", "teapots", "--data", "/nonexistent"]);
    assert!(!out.status.success());
}

#[test]
fn label_serve_requires_a_data_root() {
    let out = kptk(&["label-serve"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.data"));
}

#[test]
fn pipeline_writes_stamped_outputs_and_scores_ground_truth_maps() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (data, targets, results) = (root.join("data"), root.join("targets"), root.join("results"));
    ok(&["simulate", "--data", p(&data), "--train", "1", "--test", "1", "--duration", "2"]);
    assert!(std::fs::read_to_string(data.join("stamp.txt")).unwrap().starts_with("# stamp "));
    assert!(data.join("valve-000/sequence.toml").is_file() && data.join("valve-001/sequence.toml").is_file());

    ok(&["targets", "--data", p(&data), "--out", p(&targets)]);
    assert!(targets.join("valve-001/manifest.json").is_file());
    assert!(!targets.join("valve-000").exists(), "train sequence rendered under the default test split");

    ok(&["track", "--data", p(&data), "--targets", p(&targets), "--out", p(&results), "--trajectory"]);
    let stream = std::fs::read_to_string(results.join("valve-001.results")).unwrap();
    assert!(stream.lines().any(|l| l.starts_with("# stamp ")), "{stream}");
    assert!(results.join("valve-001.kptr").is_file());

    let json = root.join("eval.json");
    let text = ok(&["eval", "--data", p(&data), "--results", p(&results), "--json", p(&json)]);
    assert!(text.starts_with("# stamp "));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    let stats = &report["metrics"]["stats"];
    assert!(stats["mean_3d_cm"].as_f64().unwrap() < 1.0, "{report}");
    assert_eq!(stats["pct_under_3cm"].as_f64().unwrap(), 100.0);
    assert_eq!(report["metrics"]["misses"].as_u64().unwrap(), 0);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);

    let mono = root.join("mono");
    ok(&["track", "--data", p(&data), "--targets", p(&targets), "--out", p(&mono), "--mode", "mono"]);
    let text = ok(&["eval", "--data", p(&data), "--results", p(&mono)]);
    assert!(text.lines().count() > 1);
}

#[test]
fn eval_reports_missing_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--data", p(&data), "--train", "0", "--test", "1", "--duration", "1"]);
    let out = kptk(&["eval", "--data", p(&data), "--results", p(&dir.path().join("none"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no results for sequence 'valve-000'"));
}

#[test]
fn bench_prints_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--data", p(&data), "--train", "0", "--test", "1", "--duration", "1"]);
    let text = ok(&["bench", "--data", p(&data), "--frames", "10"]);
    assert!(text.starts_with("# stamp "));
    assert_eq!(text.lines().count(), 7, "{text}");
}
