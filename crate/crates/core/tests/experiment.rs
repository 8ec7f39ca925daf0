use fedgengmm::eval::Method;
use fedgengmm::experiment::{
    emit_results, mean_std, prepare_cell, records_csv, results_csv, run_scenario, ExperimentConfig,
    METRICS,
};

fn small_config(extra: &str) -> ExperimentConfig {
    let json = format!(
        r#"{{
          "dataset": {{"source": "synthetic", "m_classes": 3, "d": 2, "n": 900, "separation": 1.0}},
          "scheme": "dirichlet",
          "sweep": {{"variable": "alpha", "values": [0.2, 1.0]}},
          "n_clients": 4,
          "gmm": {{"k_min": 3, "k_max": 3}},
          "h": 20,
          "methods": ["fedgengmm", "dem_init3", "local_models", "benchmark"],
          "ood": {{"kind": "mixture_shift", "n_sd": 5.0, "anomaly_ratio": 0.1}},
          "repeats": 3,
          "seed_base": 42
          {extra}
        }}"#
    );
    ExperimentConfig::from_json(&json).unwrap()
}

#[test]
fn summary_shape_and_order() {
    let cfg = small_config("");
    let result = run_scenario(&cfg).unwrap();
    assert_eq!(result.n_missing(), 0);
    assert_eq!(result.summary.len(), 4 * 2 * METRICS.len());
    let csv = results_csv(&result);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,sweep_variable,sweep_value,metric,mean,std,n_repeats");
    assert_eq!(lines.len(), 1 + 24);
    assert!(lines[1].starts_with("fedgengmm,alpha,0.2,gamma,"));
    assert!(lines[4].starts_with("fedgengmm,alpha,1,gamma,"));
    assert!(lines[24].starts_with("benchmark,alpha,1,rounds,0,0,3"));
}

#[test]
fn summary_recomputes_from_records() {
    let cfg = small_config("");
    let result = run_scenario(&cfg).unwrap();
    for row in &result.summary {
        let vals: Vec<f64> = result
            .outcomes
            .iter()
            .filter(|o| o.method == row.method && o.sweep_value == row.sweep_value)
            .map(|o| {
                let r = o.record.as_ref().unwrap();
                match row.metric {
                    "gamma" => r.gamma,
                    "auc_pr" => r.auc_pr,
                    _ => r.rounds as f64,
                }
            })
            .collect();
        assert_eq!(vals.len(), row.n_repeats);
        let (mean, std) = mean_std(&vals);
        assert!((mean - row.mean).abs() <= 1e-12 * mean.abs().max(1.0));
        assert!((std - row.std).abs() <= 1e-12 * std.abs().max(1.0));
        assert!(row.std >= 0.0);
    }
    for o in &result.outcomes {
        let r = o.record.as_ref().unwrap();
        assert!((0.0..=1.0).contains(&r.auc_pr));
        match o.method {
            Method::FedGenGmm => assert_eq!(r.rounds, 1),
            Method::DemInit3 => assert!(r.rounds >= 2),
            _ => assert_eq!(r.rounds, 0),
        }
    }
}

#[test]
fn no_row_is_both_train_and_test() {
    let cfg = small_config("");
    for sweep in 0..2 {
        for repeat in 0..3 {
            let cell = prepare_cell(&cfg, None, sweep, repeat).unwrap();
            cell.audit_hygiene().unwrap();
            let test_rows = cell.test_dataset_rows();
            let train: std::collections::HashSet<usize> = cell.train_rows.iter().copied().collect();
            assert!(test_rows.iter().all(|r| !train.contains(r)));
            let anomalies = cell.test.labels.iter().filter(|&&l| l).count();
            assert_eq!(anomalies, (0.1 * cell.test.labels.len() as f64).round() as usize);
        }
    }
}

#[test]
fn repeats_get_fresh_splits() {
    let cfg = small_config("");
    let a = prepare_cell(&cfg, None, 0, 0).unwrap();
    let b = prepare_cell(&cfg, None, 0, 1).unwrap();
    assert_ne!(a.train_rows, b.train_rows);
    assert_ne!(cfg.method_seed(0, 0, Method::FedGenGmm), cfg.method_seed(0, 0, Method::Benchmark));
    assert_ne!(cfg.method_seed(0, 0, Method::FedGenGmm), cfg.method_seed(1, 0, Method::FedGenGmm));
}

#[test]
fn identical_runs_emit_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config("");
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    emit_results(&run_scenario(&cfg).unwrap(), &pa).unwrap();
    emit_results(&run_scenario(&cfg).unwrap(), &pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
}

#[test]
fn failing_cells_are_recorded_not_fatal() {
    // Quantity alpha 5 exceeds the 3 classes: every cell fails at partition time.
    let json = r#"{
      "dataset": {"source": "synthetic", "m_classes": 3, "d": 2, "n": 300, "separation": 1.0},
      "scheme": "quantity",
      "sweep": {"variable": "n_clients", "values": [2, 3]},
      "alpha": 5,
      "gmm": {"k_min": 2, "k_max": 2},
      "methods": ["benchmark"],
      "ood": {"kind": "additive_gaussian", "variance": 0.005, "anomaly_ratio": 0.1},
      "repeats": 2
    }"#;
    let cfg = ExperimentConfig::from_json(json).unwrap();
    let result = run_scenario(&cfg).unwrap();
    assert_eq!(result.n_missing(), 4);
    assert!(result.summary.iter().all(|r| r.n_repeats == 0));
    assert!(records_csv(&result).contains("data preparation failed"));
}

#[test]
fn invalid_configs_rejected() {
    let base = r#""dataset": {"source": "synthetic", "m_classes": 3, "d": 2, "n": 300, "separation": 1.0},
      "scheme": "dirichlet", "gmm": {"k_min": 2, "k_max": 2}, "methods": ["benchmark"],
      "ood": {"kind": "mixture_shift", "n_sd": 5.0, "anomaly_ratio": 0.1}"#;
    let bad = [
        r#""sweep": {"variable": "alpha", "values": []}"#.to_string(),
        r#""sweep": {"variable": "alpha", "values": [0.5]}, "repeats": 0"#.to_string(),
        r#""sweep": {"variable": "alpha", "values": [-1.0]}"#.to_string(),
        r#""sweep": {"variable": "n_clients", "values": [2.5]}"#.to_string(),
    ];
    for b in bad {
        let json = format!("{{{base}, {b}}}");
        assert!(ExperimentConfig::from_json(&json).is_err(), "{b}");
    }
}

#[test]
fn constrained_clients_sweep() {
    let json = r#"{
      "dataset": {"source": "synthetic", "m_classes": 3, "d": 2, "n": 900, "separation": 1.0},
      "scheme": "dirichlet",
      "sweep": {"variable": "k_clients", "values": [1, 2, 4]},
      "alpha": 0.5,
      "n_clients": 3,
      "gmm": {"k_min": 6, "k_max": 6},
      "h": 30,
      "methods": ["fedgengmm"],
      "ood": {"kind": "mixture_shift", "n_sd": 5.0, "anomaly_ratio": 0.1},
      "repeats": 1
    }"#;
    let result = run_scenario(&ExperimentConfig::from_json(json).unwrap()).unwrap();
    assert_eq!(result.n_missing(), 0);
    let g1 = result.row(Method::FedGenGmm, 1.0, "gamma").unwrap().mean;
    let g4 = result.row(Method::FedGenGmm, 4.0, "gamma").unwrap().mean;
    assert!(g4 > g1);
}
