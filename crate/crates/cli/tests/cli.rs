use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fedgengmm");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn gen(dir: &Path) {
    ok(
        dir,
        &["gen-data", "--classes", "3", "--dim", "3", "--n", "900", "--seed", "5", "--out", "d.csv", "--truth", "t.fgmm"],
    );
    ok(
        dir,
        &["partition", "--data", "d.csv", "--label-column", "label", "--alpha", "0.5", "--clients", "3", "--seed", "1", "--out", "p.csv"],
    );
}

#[test]
fn one_shot_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir);
    let local = ok(
        dir,
        &["train-local", "--data", "d.csv", "--label-column", "label", "--partition", "p.csv", "--k-max", "3", "--out", "l.fgmm"],
    );
    assert_eq!(local["clients"], 3);
    let agg = ok(dir, &["aggregate", "--models", "l.fgmm", "--k-min", "3", "--k-max", "3", "--h", "50", "--out", "g.fgmm"]);
    let pooled = agg["pooled_k"].as_u64().unwrap();
    assert_eq!(agg["synthetic_size"].as_u64().unwrap(), 50 * pooled);
    assert_eq!(agg["ledger"]["client_to_server_rounds"], 1);
    assert_eq!(agg["report"]["selected_k"], 3);

    // Evaluating the generator on a label-free copy of the data.
    let text = std::fs::read_to_string(dir.join("d.csv")).unwrap();
    let stripped: String = text
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    std::fs::write(dir.join("x.csv"), stripped).unwrap();
    let g = ok(dir, &["evaluate", "--model", "g.fgmm", "--data", "x.csv"])["gamma"].as_f64().unwrap();
    let t = ok(dir, &["evaluate", "--model", "t.fgmm", "--data", "x.csv"])["gamma"].as_f64().unwrap();
    assert!(g.is_finite() && t.is_finite());
    assert!((g - t).abs() < 0.5, "aggregate {g} vs generator {t}");
}

#[test]
fn dem_and_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir);
    for init in ["range", "subset", "kmeans"] {
        let v = ok(
            dir,
            &["dem", "--data", "d.csv", "--label-column", "label", "--partition", "p.csv", "--k", "3", "--init", init, "--out", "dem.fgmm"],
        );
        assert!(v["rounds"].as_u64().unwrap() >= 2, "{init}");
    }
    let v = ok(dir, &["benchmark", "--data", "d.csv", "--label-column", "label", "--k-min", "3", "--k-max", "3", "--out", "b.fgmm"]);
    assert_eq!(v["report"]["selected_k"], 3);
}

#[test]
fn evaluate_reports_auc_with_anomaly_column() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir);
    let mut csv = String::from("x0,x1,x2,anomaly\n");
    for i in 0..20 {
        let v = 0.3 + 0.01 * i as f64;
        csv.push_str(&format!("{v},{v},{v},0\n"));
    }
    csv.push_str("5,5,5,1\n-4,-4,-4,1\n");
    std::fs::write(dir.join("e.csv"), csv).unwrap();
    let v = ok(dir, &["evaluate", "--model", "t.fgmm", "--data", "e.csv", "--anomaly-column", "anomaly"]);
    assert_eq!(v["rows"], 22);
    assert_eq!(v["auc_pr"].as_f64().unwrap(), 1.0);
}

#[test]
fn experiment_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("cfg.json"),
        r#"{
          "dataset": {"source": "synthetic", "m_classes": 3, "d": 2, "n": 450, "separation": 1.0},
          "scheme": "dirichlet",
          "sweep": {"variable": "alpha", "values": [0.5]},
          "n_clients": 3,
          "gmm": {"k_min": 3, "k_max": 3},
          "h": 20,
          "methods": ["fedgengmm", "benchmark"],
          "ood": {"kind": "mixture_shift", "n_sd": 5.0, "anomaly_ratio": 0.1},
          "repeats": 2
        }"#,
    )
    .unwrap();
    let v = ok(dir, &["experiment", "--config", "cfg.json", "--seed", "3", "--out-dir", "a"]);
    assert_eq!(v["cells"], 4);
    assert_eq!(v["missing_cells"], 0);
    ok(dir, &["experiment", "--config", "cfg.json", "--seed", "3", "--out-dir", "b"]);
    let ra = std::fs::read(dir.join("a/results.csv")).unwrap();
    assert_eq!(ra, std::fs::read(dir.join("b/results.csv")).unwrap());
    assert_eq!(String::from_utf8(ra).unwrap().lines().count(), 1 + 2 * 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed_base"], 3);
    assert!(dir.join("a/records.csv").exists());
}

#[test]
fn errors_exit_nonzero_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = run(dir, &["partition", "--data", "missing.csv", "--out", "p.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    std::fs::write(dir.join("bad.csv"), "a,b\n1,2\n3,oops\n").unwrap();
    let out = run(dir, &["benchmark", "--data", "bad.csv", "--out", "b.fgmm"]);
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("row 3") && msg.contains("column 2"), "{msg}");

    std::fs::write(dir.join("junk.fgmm"), b"nope").unwrap();
    std::fs::write(dir.join("x.csv"), "a\n0.5\n").unwrap();
    let out = run(dir, &["evaluate", "--model", "junk.fgmm", "--data", "x.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model file"));
}
