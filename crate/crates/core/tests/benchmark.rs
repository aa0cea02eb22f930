use std::fs;

use crowdal::dataset::synthetic::{generate, SyntheticConfig};
use crowdal::eval::CURVE_HEADER;
use crowdal::*;

fn dataset() -> Dataset {
    generate(&SyntheticConfig {
        n: 80,
        dim: 5,
        n_labels: 3,
        seed: 4,
        ..Default::default()
    })
    .unwrap()
}

fn config(methods: Vec<Method>, seeds: Vec<u64>) -> BenchmarkConfig {
    let settings = RunSettings {
        budget: 30,
        checkpoint_every: 10,
        fractions: SplitFractions::new(0.1, 0.4, 0.5),
        ..RunSettings::synthetic_benchmark()
    };
    BenchmarkConfig::new(methods, seeds, settings)
}

#[test]
fn full_grid_is_complete_and_summarised() {
    let ds = dataset();
    let run = run_benchmark(&ds, &config(Method::ALL.to_vec(), vec![0, 1])).unwrap();
    let report = &run.report;
    assert!(report.is_complete());
    assert_eq!(report.methods.len(), 8);
    assert_eq!(run.cells.len(), 16);
    for m in &report.methods {
        let grid: Vec<usize> = m.points.iter().map(|p| p.queries).collect();
        assert_eq!(grid, vec![0, 10, 20, 30], "{}", m.method);
        assert!(m.points.iter().all(|p| p.n == 2 && p.std.is_some()));
        assert!(m.points.iter().all(|p| (0.0..=1.0).contains(&p.mean)));
    }
    assert_eq!(report.method(Method::SmvRd).unwrap().dominance_vs_reference, Some(1.0));
    assert_eq!(report.dominance(Method::Mac, Method::Mac), Some(1.0));

    let csv = run.curves_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CURVE_HEADER));
    let keys: Vec<(String, u64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].parse().unwrap())
        })
        .collect();
    assert_eq!(keys.len(), 16 * 4);
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn artefacts_are_written_and_reproducible() {
    let ds = dataset();
    let cfg = config(vec![Method::Mac, Method::SmvRd], vec![3]);
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    run_benchmark(&ds, &cfg).unwrap().write_to(first.path()).unwrap();
    run_benchmark(&ds, &cfg).unwrap().write_to(second.path()).unwrap();
    for rel in [
        "curves.csv",
        "report.json",
        "logs/mac_seed3.csv",
        "logs/smv_rd_seed3.csv",
        "manifests/mac_seed3.json",
        "simulators/seed3.json",
    ] {
        let a = fs::read(first.path().join(rel)).unwrap();
        let b = fs::read(second.path().join(rel)).unwrap();
        assert!(!a.is_empty(), "{rel}");
        assert_eq!(a, b, "{rel} differs between runs");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(first.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reference"], "smv_rd");
    assert_eq!(report["dataset_hash"], ds.content_hash());
}

#[test]
fn worker_count_does_not_change_results() {
    let ds = dataset();
    let mut one = config(vec![Method::Mac, Method::MvRd], vec![0, 1]);
    one.workers = 1;
    let mut many = one.clone();
    many.workers = 4;
    let a = run_benchmark(&ds, &one).unwrap();
    let b = run_benchmark(&ds, &many).unwrap();
    assert_eq!(a.curves_csv(), b.curves_csv());
}

#[test]
fn a_failing_seed_is_reported_as_missing() {
    let ds = dataset();
    let mut cfg = config(vec![Method::Mac, Method::SmvRd], vec![0]);
    cfg.settings.fractions = SplitFractions::new(0.0, 0.5, 0.5);
    let run = run_benchmark(&ds, &cfg).unwrap();
    assert!(!run.report.is_complete());
    assert_eq!(run.report.missing.len(), 2);
    assert!(run.report.missing.iter().all(|m| m.error.contains("labeled")));
    assert_eq!(run.curves_csv().lines().count(), 1);
}

#[test]
fn empty_method_or_seed_lists_are_errors() {
    let ds = dataset();
    assert!(run_benchmark(&ds, &config(vec![], vec![0])).is_err());
    assert!(run_benchmark(&ds, &config(vec![Method::Mac], vec![])).is_err());
}
