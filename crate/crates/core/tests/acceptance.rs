//! Acceptance checks. Prints one PASS/FAIL/SKIPPED line per criterion.
//!
//! Criteria that are not met are reported, not asserted, so the rest of the
//! suite still runs; set `ACCEPTANCE_STRICT=1` to turn any FAIL into a
//! non-zero exit. `SCENE_MLD=/path/to/scene.mld` enables the Scene run.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdal::active::select_annotator;
use crowdal::dataset::synthetic::{generate, SyntheticConfig};
use crowdal::dataset::{load_dataset, DatasetFormat};
use crowdal::linear::sigmoid;
use crowdal::model::{e_step, fit_em, q_gradient, q_objective, BatchItem, EmOptions, LabelBatch, LabelModel};
use crowdal::*;

enum Outcome {
    Pass,
    Fail,
    Skipped,
}

struct Line {
    name: &'static str,
    outcome: Outcome,
    detail: String,
}

fn verdict(name: &'static str, ok: bool, detail: String) -> Line {
    Line {
        name,
        outcome: if ok { Outcome::Pass } else { Outcome::Fail },
        detail,
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

struct Case {
    xc: Vec<Vec<f64>>,
    xa: Vec<Vec<f64>>,
    ann: Vec<Vec<(usize, Bipolar)>>,
    known: Vec<Option<Bipolar>>,
}

impl Case {
    fn batch(&self) -> LabelBatch<'_> {
        LabelBatch {
            items: (0..self.xc.len())
                .map(|i| BatchItem {
                    instance: i,
                    classifier: &self.xc[i],
                    annotator: &self.xa[i],
                    annotations: &self.ann[i],
                    known: self.known[i],
                })
                .collect(),
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Random inputs shaped like a real table: raw features, optional label
/// code, and a trailing bias.
fn random_case(rng: &mut ChaCha8Rng, n: usize, d: usize, n_labels: usize, m: usize, enhanced: bool) -> (Case, LabelModel) {
    let mut case = Case {
        xc: Vec::new(),
        xa: Vec::new(),
        ann: Vec::new(),
        known: Vec::new(),
    };
    for _ in 0..n {
        let mut xa = random_vec(rng, d, 2.0);
        let mut xc = xa.clone();
        if enhanced {
            xc.extend((0..n_labels).map(|_| rng.gen_range(0.0..1.0)));
        }
        xc.push(1.0);
        xa.push(1.0);
        let mut cell = Vec::new();
        for j in 0..m {
            if rng.gen_bool(0.7) {
                cell.push((j, Bipolar::from_bool(rng.gen_bool(0.5))));
            }
        }
        case.known.push(if rng.gen_bool(0.1) { Some(Bipolar::from_bool(rng.gen_bool(0.5))) } else { None });
        case.xc.push(xc);
        case.xa.push(xa);
        case.ann.push(cell);
    }
    let model = LabelModel {
        w0: random_vec(rng, case.xc[0].len(), 1.5),
        annotators: (0..m).map(|_| random_vec(rng, d + 1, 1.5)).collect(),
    };
    (case, model)
}

fn flatten(model: &LabelModel) -> Vec<f64> {
    model.w0.iter().chain(model.annotators.iter().flatten()).copied().collect()
}

fn unflatten(template: &LabelModel, theta: &[f64]) -> LabelModel {
    let mut out = template.clone();
    let mut it = theta.iter().copied();
    for w in out.w0.iter_mut().chain(out.annotators.iter_mut().flatten()) {
        *w = it.next().unwrap();
    }
    out
}

fn gradient_check() -> Line {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let configs = 120;
    for c in 0..configs {
        let d = rng.gen_range(1..=4);
        let n_labels = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=10);
        let lambda = [0.0, 1e-3, 1.0][c % 3];
        for _label in 0..n_labels {
            let (case, model) = random_case(&mut rng, n, d, n_labels, m, c % 2 == 0);
            let batch = case.batch();
            let post: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let g = q_gradient(&model, &post, &batch, lambda).unwrap();
            let analytic: Vec<f64> = g.w0.iter().chain(g.annotators.iter().flatten()).copied().collect();
            let theta = flatten(&model);
            let h = 1e-5;
            let numeric: Vec<f64> = (0..theta.len())
                .map(|k| {
                    let mut up = theta.clone();
                    let mut down = theta.clone();
                    up[k] += h;
                    down[k] -= h;
                    let qu = q_objective(&unflatten(&model, &up), &post, &batch, lambda).unwrap();
                    let qd = q_objective(&unflatten(&model, &down), &post, &batch, lambda).unwrap();
                    (qu - qd) / (2.0 * h)
                })
                .collect();
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
            worst = worst.max(diff / norm.max(1.0));
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "gradient correctness",
        worst <= 1e-5 && elapsed < Duration::from_secs(10),
        format!("{configs} configurations, worst relative error {worst:.2e}, {}", secs(elapsed)),
    )
}

fn e_step_oracle() -> Line {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    while count < 1200 {
        let (d, m, enhanced) = (rng.gen_range(1..=5), rng.gen_range(1..=4), rng.gen_bool(0.5));
        let (mut case, model) = random_case(&mut rng, 10, d, 3, m, enhanced);
        case.known.iter_mut().for_each(|k| *k = None);
        let posts = e_step(&model, &case.batch()).unwrap();
        for i in 0..case.xc.len() {
            let a: f64 = model.w0.iter().zip(&case.xc[i]).map(|(w, x)| w * x).sum();
            let joint = |z: f64| {
                let mut p = 1.0 / (1.0 + (-z * a).exp());
                for &(j, y) in &case.ann[i] {
                    let b: f64 = model.annotators[j].iter().zip(&case.xa[i]).map(|(w, x)| w * x).sum();
                    let e = 1.0 / (1.0 + (-b).exp());
                    p *= if y.as_f64() == z { e } else { 1.0 - e };
                }
                p
            };
            let (pos, neg) = (joint(1.0), joint(-1.0));
            worst = worst.max((posts[i] - pos / (pos + neg)).abs());
            count += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        "E-step oracle equivalence",
        worst <= 1e-12 && elapsed < Duration::from_secs(5),
        format!("{count} instances, max abs error {worst:.2e}, {}", secs(elapsed)),
    )
}

/// A planted crowd: true weights generate z, annotators answer with
/// instance-dependent accuracy.
fn planted_case(rng: &mut ChaCha8Rng, n: usize, d: usize, m: usize) -> Case {
    let w_true = random_vec(rng, d + 1, 2.0);
    let experts: Vec<Vec<f64>> = (0..m).map(|_| random_vec(rng, d + 1, 1.0)).collect();
    let mut case = Case {
        xc: Vec::new(),
        xa: Vec::new(),
        ann: Vec::new(),
        known: Vec::new(),
    };
    for _ in 0..n {
        let mut x = random_vec(rng, d, 2.0);
        x.push(1.0);
        let a: f64 = w_true.iter().zip(&x).map(|(w, v)| w * v).sum();
        let z = Bipolar::from_bool(rng.gen_bool(1.0 / (1.0 + (-a).exp())));
        let mut cell = Vec::new();
        for (j, e) in experts.iter().enumerate() {
            if rng.gen_bool(0.6) {
                let b: f64 = e.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + 1.0;
                let right = rng.gen::<f64>() < sigmoid(b);
                cell.push((j, if right { z } else { z.flip() }));
            }
        }
        case.xc.push(x.clone());
        case.xa.push(x);
        case.ann.push(cell);
        case.known.push(None);
    }
    case
}

fn em_monotonicity() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let opts = EmOptions::default();
    let mut worst_drop: f64 = 0.0;
    let mut fits = 0;
    let mut warm_total = 0;
    let mut warm_converged = 0;
    for _ in 0..20 {
        let d = rng.gen_range(2..=6);
        let m = 3;
        let mut case = planted_case(&mut rng, 80, d, m);
        let lambda = 1e-3;
        let cold = LabelModel::zeros(d + 1, d + 1, m);
        let mut fit = fit_em(&cold, &case.batch(), lambda, &opts).unwrap();
        fits += 1;
        for w in fit.trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        for _ in 0..10 {
            let i = rng.gen_range(0..case.xc.len());
            let j = rng.gen_range(0..m);
            if case.ann[i].iter().any(|&(a, _)| a == j) {
                continue;
            }
            case.ann[i].push((j, Bipolar::from_bool(rng.gen_bool(0.5))));
            let warm = fit_em(&fit.model, &case.batch(), lambda, &opts).unwrap();
            fits += 1;
            warm_total += 1;
            if warm.converged && warm.iterations < 100 {
                warm_converged += 1;
            }
            for w in warm.trace.windows(2) {
                worst_drop = worst_drop.max(w[0] - w[1]);
            }
            fit = warm;
        }
    }
    let rate = warm_converged as f64 / warm_total as f64;
    verdict(
        "EM monotonicity",
        worst_drop <= 1e-9 && rate >= 0.95,
        format!(
            "{fits} fits, largest per-iteration decrease {worst_drop:.2e}, warm starts converged within 100 iterations {warm_converged}/{warm_total}"
        ),
    )
}

/// One perfect annotator and two who are right 60% of the time.
struct MixedCrowd {
    truths: Vec<Bipolar>,
    n_labels: usize,
    perfect: usize,
    seed: u64,
}

impl AnnotationChannel for MixedCrowd {
    fn request(&mut self, q: &QueryTriple) -> Result<Annotation> {
        let truth = self.truths[q.instance * self.n_labels + q.label];
        if q.annotator == self.perfect {
            return Ok(Annotation { annotator: q.annotator, value: truth });
        }
        let key = ((q.instance * self.n_labels + q.label) * 8 + q.annotator) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ key);
        let value = if rng.gen_bool(0.6) { truth } else { truth.flip() };
        Ok(Annotation { annotator: q.annotator, value })
    }
}

fn annotator_identification() -> Line {
    let start = Instant::now();
    let mut rates = Vec::new();
    for seed in 0..5u64 {
        let ds = generate(&SyntheticConfig {
            n: 300,
            dim: 8,
            n_labels: 2,
            seed,
            ..Default::default()
        })
        .unwrap();
        let settings = RunSettings {
            budget: 300,
            checkpoint_every: 300,
            ..RunSettings::synthetic_benchmark()
        };
        let split = DataSplit::new(ds.len(), settings.fractions, seed).unwrap();
        let perfect = (seed % 3) as usize;
        let mut crowd = MixedCrowd {
            truths: (0..ds.len()).flat_map(|i| ds.truths(i).to_vec()).collect(),
            n_labels: 2,
            perfect,
            seed,
        };
        let mut session = ActiveSession::new(&ds, split.clone(), Method::Mac, settings, seed, &mut crowd).unwrap();
        session.run(&mut crowd).unwrap();
        let model = session.model().unwrap();
        let probe = &split.test[..100];
        let mut hits = 0;
        for &i in probe {
            for l in 0..2 {
                let scored: Vec<(usize, f64)> = (0..3)
                    .map(|j| (j, model.expertise(l, j, session.table().annotator(i)).unwrap()))
                    .collect();
                if select_annotator(&scored).unwrap() == perfect {
                    hits += 1;
                }
            }
        }
        rates.push(hits as f64 / (probe.len() * 2) as f64);
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let elapsed = start.elapsed();
    let per_seed: Vec<String> = rates.iter().map(|r| format!("{r:.2}")).collect();
    verdict(
        "annotator identification",
        mean >= 0.8 && elapsed < Duration::from_secs(120),
        format!("perfect annotator chosen on {:.1}% of probes (per seed {}), {}", 100.0 * mean, per_seed.join(" "), secs(elapsed)),
    )
}

fn active_learning_benefit() -> Line {
    let start = Instant::now();
    let ds = generate(&SyntheticConfig::default()).unwrap();
    let methods = vec![Method::Mac, Method::McrRd, Method::MvRd, Method::SmvRd];
    let config = BenchmarkConfig::new(methods, (0..5).collect(), RunSettings::synthetic_benchmark());
    let run = run_benchmark(&ds, &config).unwrap();
    let elapsed = start.elapsed();
    let r = &run.report;
    if !r.is_complete() {
        return verdict("active-learning benefit", false, format!("{} cells failed", r.missing.len()));
    }
    let fin = |m: Method| r.method(m).and_then(|s| s.final_mean()).unwrap_or(f64::NAN);
    let mac_vs_mcr = r.dominance(Method::Mac, Method::McrRd).unwrap_or(0.0);
    let mac_vs_smv = r.dominance(Method::Mac, Method::SmvRd).unwrap_or(0.0);
    let checks = [
        mac_vs_mcr >= 0.7,
        fin(Method::Mac) > fin(Method::McrRd),
        mac_vs_smv >= 0.8,
        fin(Method::McrRd) >= fin(Method::MvRd),
        elapsed < Duration::from_secs(15 * 60),
    ];
    verdict(
        "active-learning benefit",
        checks.iter().all(|&c| c),
        format!(
            "MAC>=MCR+RD at {:.0}% of checkpoints [{}]; final MAC {:.4} vs MCR+RD {:.4} [{}]; MAC>=SMV+RD at {:.0}% [{}]; final MCR+RD {:.4} vs MV+RD {:.4} [{}]; {}",
            100.0 * mac_vs_mcr,
            ok(checks[0]),
            fin(Method::Mac),
            fin(Method::McrRd),
            ok(checks[1]),
            100.0 * mac_vs_smv,
            ok(checks[2]),
            fin(Method::McrRd),
            fin(Method::MvRd),
            ok(checks[3]),
            secs(elapsed)
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "not met"
    }
}

fn scene_run() -> Line {
    let Ok(path) = std::env::var("SCENE_MLD") else {
        return Line {
            name: "Scene-scale run",
            outcome: Outcome::Skipped,
            detail: "set SCENE_MLD to a Scene dataset in MLD format to run".into(),
        };
    };
    let start = Instant::now();
    let ds = match load_dataset(&path, DatasetFormat::Mld) {
        Ok(ds) => ds,
        Err(e) => return verdict("Scene-scale run", false, format!("cannot load {path}: {e}")),
    };
    let settings = RunSettings {
        budget: 8000,
        checkpoint_every: 200,
        ..RunSettings::default()
    };
    let config = BenchmarkConfig::new(vec![Method::Mac, Method::SmvRd], (0..5).collect(), settings);
    let run = match run_benchmark(&ds, &config) {
        Ok(run) => run,
        Err(e) => return verdict("Scene-scale run", false, e.to_string()),
    };
    let dom = run.report.dominance(Method::Mac, Method::SmvRd).unwrap_or(0.0);
    verdict(
        "Scene-scale run",
        run.report.is_complete() && dom >= 0.8,
        format!("MAC>=SMV+RD at {:.0}% of checkpoints, {}", 100.0 * dom, secs(start.elapsed())),
    )
}

fn determinism() -> Line {
    let ds = generate(&SyntheticConfig::default()).unwrap();
    let settings = RunSettings {
        budget: 200,
        ..RunSettings::synthetic_benchmark()
    };
    let mut identical = 0;
    let mut total = 0;
    for method in Method::ALL {
        for seed in [0u64, 7] {
            let split = DataSplit::new(ds.len(), settings.fractions, seed).unwrap();
            let run = |mode: ExecMode| {
                let s = RunSettings { mode, ..settings.clone() };
                let mut sim = build_simulators(&ds, s.n_annotators, s.lambda, seed, mode).unwrap();
                let out = run_strategy(&ds, &split, method, &s, seed, &mut sim).unwrap();
                (out.store.to_log_csv(), out.curve.to_csv())
            };
            let a = run(ExecMode::Parallel);
            let b = run(ExecMode::Parallel);
            let c = run(ExecMode::Sequential);
            total += 1;
            if a == b && a == c {
                identical += 1;
            }
        }
    }
    verdict(
        "determinism",
        identical == total,
        format!("{identical}/{total} (method, seed) cells byte-identical across reruns and execution modes"),
    )
}

fn simulator_statistics() -> Line {
    let ds = generate(&SyntheticConfig {
        n: 2000,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let sim = build_simulators(&ds, 3, 1.0, 5, ExecMode::Sequential).unwrap();
    let (mut non_expert, mut non_expert_right, mut expert, mut expert_right) = (0usize, 0usize, 0usize, 0usize);
    'outer: for i in 0..ds.len() {
        for l in 0..ds.n_labels() {
            for j in 0..3 {
                let right = sim.answer(i, l, j) == ds.truth(i, l);
                if sim.is_expert(i, l, j) {
                    expert += 1;
                    expert_right += right as usize;
                } else if non_expert < 10_000 {
                    non_expert += 1;
                    non_expert_right += right as usize;
                }
                if non_expert >= 10_000 && expert >= 10_000 {
                    break 'outer;
                }
            }
        }
    }
    let acc = non_expert_right as f64 / non_expert as f64;
    let expert_acc = expert_right as f64 / expert as f64;
    verdict(
        "simulator statistics",
        non_expert == 10_000 && (acc - 0.75).abs() <= 0.02 && expert_right == expert,
        format!("non-expert accuracy {acc:.4} over {non_expert} draws, expert accuracy {expert_acc} over {expert} draws"),
    )
}

fn main() {
    let checks: [fn() -> Line; 8] = [
        gradient_check,
        e_step_oracle,
        em_monotonicity,
        annotator_identification,
        active_learning_benefit,
        scene_run,
        determinism,
        simulator_statistics,
    ];
    let mut failed = 0;
    for check in checks {
        let line = check();
        let tag = match line.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => {
                failed += 1;
                "FAIL"
            }
            Outcome::Skipped => "SKIPPED",
        };
        println!("{tag:7} {}: {}", line.name, line.detail);
    }
    println!("acceptance: {failed} failing criteria");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
