//! Micro-F1 evaluation, learning curves and the multi-seed benchmark grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::active::{run_strategy, Method, RunOutput, RunSettings};
use crate::dataset::{Bipolar, DataSplit, Dataset};
use crate::error::{Error, Result};
use crate::linear;
use crate::model::FeatureTable;
use crate::par::{self, ExecMode};
use crate::sim::{build_simulators, CrowdSimulator, SimulatorManifest};

/// `2TP / (2TP + FP + FN)` pooled over every entry, positive class `+1`.
/// Defined as 1.0 when there are no positives in either input.
pub fn micro_f1(predicted: &[Bipolar], truth: &[Bipolar]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, t) in predicted.iter().zip(truth) {
        match (p.is_pos(), t.is_pos()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

/// Thresholds each label's classifier at 0.5 (strictly greater is positive)
/// on the given instances and scores micro-F1 against the ground truth.
pub fn evaluate_classifiers(
    weights: &[&[f64]],
    table: &FeatureTable,
    ds: &Dataset,
    instances: &[usize],
) -> Result<f64> {
    if weights.len() != ds.n_labels() {
        return Err(Error::Dimension {
            expected: ds.n_labels(),
            actual: weights.len(),
        });
    }
    let mut predicted = Vec::with_capacity(instances.len() * weights.len());
    let mut truth = Vec::with_capacity(predicted.capacity());
    for &i in instances {
        for (l, w) in weights.iter().enumerate() {
            let p = linear::predict_prob(w, table.classifier(i))?;
            predicted.push(Bipolar::from_bool(p > 0.5));
            truth.push(ds.truth(i, l));
        }
    }
    micro_f1(&predicted, &truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub queries: usize,
    pub micro_f1: f64,
}

/// Test micro-F1 against the number of queries for one (method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub method: String,
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

pub const CURVE_HEADER: &str = "method,seed,queries,micro_f1";

impl LearningCurve {
    pub fn final_point(&self) -> Option<CurvePoint> {
        self.points.last().copied()
    }

    /// Rows in the long curve format, without the header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = writeln!(out, "{},{},{},{}", self.method, self.seed, p.queries, p.micro_f1);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CURVE_HEADER}\n{}", self.csv_rows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub queries: usize,
    pub mean: f64,
    /// Sample standard deviation; absent with fewer than two seeds.
    pub std: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub points: Vec<SummaryPoint>,
    /// Fraction of shared checkpoints where this method's mean is at least
    /// the reference method's mean.
    pub dominance_vs_reference: Option<f64>,
}

impl MethodSummary {
    pub fn mean_at(&self, queries: usize) -> Option<f64> {
        self.points.iter().find(|p| p.queries == queries).map(|p| p.mean)
    }

    pub fn final_mean(&self) -> Option<f64> {
        self.points.last().map(|p| p.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCell {
    pub method: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub dataset_hash: String,
    pub reference: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodSummary>,
    pub missing: Vec<MissingCell>,
}

impl BenchmarkReport {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method.name())
    }

    /// Fraction of shared checkpoints where `a`'s mean is at least `b`'s.
    pub fn dominance(&self, a: Method, b: Method) -> Option<f64> {
        dominance(self.method(a)?, self.method(b)?)
    }

    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

fn dominance(a: &MethodSummary, b: &MethodSummary) -> Option<f64> {
    let shared: Vec<(f64, f64)> = a
        .points
        .iter()
        .filter_map(|p| b.mean_at(p.queries).map(|m| (p.mean, m)))
        .collect();
    if shared.is_empty() {
        return None;
    }
    let wins = shared.iter().filter(|(x, y)| x >= y).count();
    Some(wins as f64 / shared.len() as f64)
}

/// Mean and sample standard deviation per checkpoint over the given curves.
pub fn summarize(method: &str, curves: &[&LearningCurve]) -> MethodSummary {
    let mut by_q: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for c in curves {
        for p in &c.points {
            by_q.entry(p.queries).or_default().push(p.micro_f1);
        }
    }
    let points = by_q
        .into_iter()
        .map(|(queries, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = (n >= 2).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
            SummaryPoint { queries, mean, std, n }
        })
        .collect();
    MethodSummary {
        method: method.to_string(),
        points,
        dominance_vs_reference: None,
    }
}

/// Provenance for one (method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: String,
    pub seed: u64,
    pub budget: usize,
    pub checkpoint_every: usize,
    pub dataset_hash: String,
    pub split_sizes: (usize, usize, usize),
    pub settings: RunSettings,
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub settings: RunSettings,
    pub reference: Method,
    /// Worker threads for the grid; 0 uses the default pool.
    pub workers: usize,
}

impl BenchmarkConfig {
    pub fn new(methods: Vec<Method>, seeds: Vec<u64>, settings: RunSettings) -> Self {
        BenchmarkConfig {
            methods,
            seeds,
            settings,
            reference: Method::SmvRd,
            workers: 0,
        }
    }
}

#[derive(Debug)]
pub struct CellResult {
    pub method: Method,
    pub seed: u64,
    pub manifest: RunManifest,
    pub outcome: std::result::Result<RunOutput, String>,
}

#[derive(Debug)]
pub struct BenchmarkRun {
    pub cells: Vec<CellResult>,
    pub simulators: Vec<(u64, std::result::Result<SimulatorManifest, String>)>,
    pub report: BenchmarkReport,
}

/// Runs every (method, seed) cell. Per seed, the split and the simulated
/// crowd are built once and shared by all methods. A failing cell is
/// recorded in the report instead of aborting the grid.
pub fn run_benchmark(ds: &Dataset, config: &BenchmarkConfig) -> Result<BenchmarkRun> {
    if config.methods.is_empty() {
        return Err(Error::Empty("method list"));
    }
    if config.seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    config.settings.validate()?;
    let settings = &config.settings;
    let dataset_hash = ds.content_hash();

    let per_seed = par::with_workers(config.workers, || {
        par::map_slice(settings.mode, &config.seeds, |&seed| -> std::result::Result<(DataSplit, CrowdSimulator), String> {
            let sim = build_simulators(ds, settings.n_annotators, settings.lambda, seed, settings.mode)
                .map_err(|e| e.to_string())?;
            let split = DataSplit::new(ds.len(), settings.fractions, seed).map_err(|e| e.to_string())?;
            Ok((split, sim))
        })
    });

    let cells: Vec<(Method, usize)> = config
        .seeds
        .iter()
        .enumerate()
        .flat_map(|(s, _)| config.methods.iter().map(move |&m| (m, s)))
        .collect();
    let outcomes = par::with_workers(config.workers, || {
        par::map_slice(settings.mode, &cells, |&(method, s)| {
            let (split, sim) = per_seed[s].as_ref().map_err(|e| format!("simulator setup failed: {e}"))?;
            let mut channel = sim.clone();
            run_strategy(ds, split, method, settings, config.seeds[s], &mut channel).map_err(|e| e.to_string())
        })
    });

    let mut results = Vec::with_capacity(cells.len());
    for ((method, s), outcome) in cells.into_iter().zip(outcomes) {
        let seed = config.seeds[s];
        let split_sizes = per_seed[s].as_ref().map(|(sp, _)| sp.sizes()).unwrap_or_default();
        results.push(CellResult {
            method,
            seed,
            manifest: RunManifest {
                method: method.name().to_string(),
                seed,
                budget: settings.budget,
                checkpoint_every: settings.checkpoint_every,
                dataset_hash: dataset_hash.clone(),
                split_sizes,
                settings: settings.clone(),
            },
            outcome,
        });
    }

    let mut missing = Vec::new();
    let mut summaries = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let curves: Vec<&LearningCurve> = results
            .iter()
            .filter(|c| c.method == method)
            .filter_map(|c| match &c.outcome {
                Ok(out) => Some(&out.curve),
                Err(e) => {
                    missing.push(MissingCell {
                        method: method.name().to_string(),
                        seed: c.seed,
                        error: e.clone(),
                    });
                    None
                }
            })
            .collect();
        summaries.push(summarize(method.name(), &curves));
    }
    let reference_summary = summaries.iter().find(|s| s.method == config.reference.name()).cloned();
    if let Some(reference) = &reference_summary {
        for s in &mut summaries {
            s.dominance_vs_reference = dominance(s, reference);
        }
    }

    let simulators = config
        .seeds
        .iter()
        .zip(&per_seed)
        .map(|(&seed, r)| (seed, r.as_ref().map(|(_, sim)| sim.manifest()).map_err(Clone::clone)))
        .collect();
    Ok(BenchmarkRun {
        cells: results,
        simulators,
        report: BenchmarkReport {
            dataset_hash,
            reference: config.reference.name().to_string(),
            seeds: config.seeds.clone(),
            methods: summaries,
            missing,
        },
    })
}

impl BenchmarkRun {
    /// All curves in the long CSV format, ordered by method then seed.
    pub fn curves_csv(&self) -> String {
        let mut ordered: Vec<&CellResult> = self.cells.iter().collect();
        ordered.sort_by_key(|c| (c.method, c.seed));
        let mut out = format!("{CURVE_HEADER}\n");
        for c in ordered {
            if let Ok(o) = &c.outcome {
                out.push_str(&o.curve.csv_rows());
            }
        }
        out
    }

    /// Writes `curves.csv`, `report.json`, and per-cell annotation logs,
    /// run manifests and per-seed simulator manifests under `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["logs", "manifests", "simulators"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        fs::write(dir.join("curves.csv"), self.curves_csv())?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&self.report)? + "\n")?;
        for c in &self.cells {
            let stem = format!("{}_seed{}", c.method.name(), c.seed);
            fs::write(
                dir.join("manifests").join(format!("{stem}.json")),
                serde_json::to_string_pretty(&c.manifest)? + "\n",
            )?;
            if let Ok(o) = &c.outcome {
                fs::write(dir.join("logs").join(format!("{stem}.csv")), o.store.to_log_csv())?;
            }
        }
        for (seed, sim) in &self.simulators {
            if let Ok(m) = sim {
                fs::write(
                    dir.join("simulators").join(format!("seed{seed}.json")),
                    serde_json::to_string_pretty(m)? + "\n",
                )?;
            }
        }
        Ok(())
    }
}

/// Convenience for callers that want sequential execution everywhere.
pub fn sequential(mut settings: RunSettings) -> RunSettings {
    settings.mode = ExecMode::Sequential;
    settings
}
