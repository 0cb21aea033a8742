use std::fs;
use std::path::Path;

use serde_json::json;

use pulsestream::experiments::{run_demo_1d, run_sweep, ExperimentConfig};
use pulsestream::par::Execution;

fn small_sweep() -> ExperimentConfig {
    ExperimentConfig {
        n: 40,
        window: [-0.5, 0.5],
        r: vec![1, 2],
        deltas: vec![0.0, 5.0],
        trials: 3,
        spikes: 3,
        positivity: vec![true, false],
        ..ExperimentConfig::sweep()
    }
}

/// CSV text with the `runtime_ms` column blanked.
fn without_runtime(path: &Path) -> String {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "runtime_ms");
    let mut out = headers.iter().collect::<Vec<_>>().join(",");
    for rec in r.records() {
        let rec = rec.unwrap();
        let fields: Vec<&str> = rec.iter().enumerate().map(|(i, f)| if Some(i) == col { "" } else { f }).collect();
        out.push('\n');
        out.push_str(&fields.join(","));
    }
    out
}

#[test]
fn sweep_rows_cover_every_cell_and_trial() {
    let cfg = small_sweep();
    let res = run_sweep(&cfg).unwrap();
    assert_eq!(res.trials.len(), cfg.trials * cfg.deltas.len() * cfg.r.len() * cfg.positivity.len());
    assert_eq!(res.aggregates.len(), cfg.deltas.len() * cfg.r.len() * cfg.positivity.len());
    for a in &res.aggregates {
        let rows: Vec<_> = res.trials.iter().filter(|t| t.delta == a.delta && t.r == a.r && t.positive == a.positive).collect();
        assert_eq!(rows.len(), a.trials);
        let ok: Vec<f64> = rows.iter().filter(|t| !t.failed).filter_map(|t| t.loc_mean).collect();
        assert_eq!(a.failures, rows.iter().filter(|t| t.failed).count());
        if !ok.is_empty() {
            let mean = ok.iter().sum::<f64>() / ok.len() as f64;
            assert!((a.loc_mean_mean.unwrap() - mean).abs() <= 1e-15);
        }
    }
}

#[test]
fn outputs_do_not_depend_on_execution_mode() {
    let seq = ExperimentConfig { execution: Execution::Sequential, ..small_sweep() };
    let par = ExperimentConfig { execution: Execution::Parallel, ..small_sweep() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_sweep(&seq).unwrap().write(a.path()).unwrap();
    run_sweep(&par).unwrap().write(b.path()).unwrap();
    assert_eq!(without_runtime(&a.path().join("trials.csv")), without_runtime(&b.path().join("trials.csv")));
    assert_eq!(fs::read(a.path().join("aggregates.csv")).unwrap(), fs::read(b.path().join("aggregates.csv")).unwrap());
}

#[test]
fn noise_free_demo_is_exact() {
    let cfg = ExperimentConfig { deltas: vec![0.0], ..ExperimentConfig::demo1d() };
    let demo = run_demo_1d(&cfg).unwrap();
    let row = &demo.result.trials[0];
    assert!(!row.failed, "{row:?}");
    assert!(row.h_l1.unwrap() <= 1e-4 * row.truth_l1.unwrap());
    assert_eq!(row.loc_mean, Some(0.0));
    let dir = tempfile::tempdir().unwrap();
    demo.write(dir.path()).unwrap();
    for f in ["config.json", "trials.csv", "aggregates.csv", "truth.csv", "measurement.csv", "estimate.csv", "recovery.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn config_files_overlay_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(&path, json!({ "sigma": 0.2, "N": 50, "solver": { "tau": 0.1 } }).to_string()).unwrap();
    let base = ExperimentConfig::sweep();
    let cfg = ExperimentConfig::from_json_file(&base, &path).unwrap();
    assert_eq!((cfg.sigma, cfg.n, cfg.solver.tau), (0.2, 50, 0.1));
    assert_eq!(cfg.deltas, base.deltas);
    assert_eq!(cfg.solver.simplex, base.solver.simplex);

    fs::write(&path, json!({ "sigmaa": 0.2 }).to_string()).unwrap();
    assert!(ExperimentConfig::from_json_file(&base, &path).is_err());
    fs::write(&path, json!({ "sigma": -1.0 }).to_string()).unwrap();
    assert!(ExperimentConfig::from_json_file(&base, &path).is_err());

    // A written config reads back unchanged.
    cfg.write_json(&path).unwrap();
    let back = ExperimentConfig::from_json_file(&ExperimentConfig::demo1d(), &path).unwrap();
    assert_eq!(back, cfg);
}
