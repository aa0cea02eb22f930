//! Batch subcommands: bench, simulate-annotators, train, eval, replay.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::Serialize;

use crowdal::dataset::AnnotationRecord;
use crowdal::enhance::ReferenceIndex;
use crowdal::eval::evaluate_classifiers;
use crowdal::model::{init_model, KnownTruth};
use crowdal::*;

use crate::config::{parse_methods, RunArgs, Seeds};

/// Process exit status of a finished subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Partial,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated methods, e.g. mac,smv_rd. Defaults to all eight.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Seed count (3 means seeds 0..3) or a comma-separated seed list.
    #[arg(long)]
    pub seeds: Option<Seeds>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Reference method for the dominance column.
    #[arg(long, default_value = "smv_rd")]
    pub reference: Method,
    /// Worker threads for the grid; 0 uses the default pool.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

pub fn bench(args: &BenchArgs) -> anyhow::Result<Status> {
    let r = args.run.resolve()?;
    let methods = if !args.methods.is_empty() {
        parse_methods(&args.methods)?
    } else if let Some(m) = &r.file.methods {
        parse_methods(m)?
    } else {
        Method::ALL.to_vec()
    };
    let seeds = args.seeds.clone().or(r.file.seeds.clone()).unwrap_or(Seeds::Count(5)).to_vec();
    if seeds.is_empty() {
        bail!("no seeds selected");
    }
    let out_dir = args
        .out_dir
        .clone()
        .or(r.file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("bench_out"));
    let mut config = BenchmarkConfig::new(methods, seeds, r.settings.clone());
    config.reference = args.reference;
    config.workers = args.workers;
    log::info!(
        "benchmark on {}: {} methods x {} seeds, budget {}",
        r.source,
        config.methods.len(),
        config.seeds.len(),
        config.settings.budget
    );
    let run = run_benchmark(&r.dataset, &config)?;
    run.write_to(&out_dir)?;
    println!("{:<8} {:>10} {:>10}", "method", "final_f1", "dominance");
    for m in &run.report.methods {
        let fin = m.final_mean().map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let dom = m
            .dominance_vs_reference
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "-".into());
        println!("{:<8} {:>10} {:>10}", m.method, fin, dom);
    }
    println!("artifacts written to {}", out_dir.display());
    for miss in &run.report.missing {
        eprintln!("cell {} seed {} failed: {}", miss.method, miss.seed, miss.error);
    }
    Ok(if run.report.is_complete() { Status::Ok } else { Status::Partial })
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the simulator manifest here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every simulated answer as a 1-based annotation log.
    #[arg(long)]
    pub answers: Option<PathBuf>,
}

pub fn simulate_annotators(args: &SimulateArgs) -> anyhow::Result<Status> {
    let r = args.run.resolve()?;
    let ds = &r.dataset;
    let sim = build_simulators(ds, r.settings.n_annotators, r.settings.lambda, args.seed, r.settings.mode)?;
    let manifest = serde_json::to_string_pretty(&sim.manifest())? + "\n";
    match &args.out {
        Some(p) => fs::write(p, manifest).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{manifest}"),
    }
    let (mut total, mut right, mut expert, mut expert_right) = (0usize, 0usize, 0usize, 0usize);
    let mut store = AnnotationStore::new(ds.len(), ds.n_labels(), sim.n_annotators());
    for i in 0..ds.len() {
        for l in 0..ds.n_labels() {
            for j in 0..sim.n_annotators() {
                let value = sim.answer(i, l, j);
                let ok = value == ds.truth(i, l);
                if sim.is_expert(i, l, j) {
                    expert += 1;
                    expert_right += ok as usize;
                } else {
                    total += 1;
                    right += ok as usize;
                }
                if args.answers.is_some() {
                    store.add(i, l, j, value)?;
                }
            }
        }
    }
    if let Some(p) = &args.answers {
        fs::write(p, store.to_log_csv()).with_context(|| format!("cannot write {}", p.display()))?;
    }
    eprintln!(
        "non-expert accuracy {:.4} over {total} answers; expert accuracy {:.4} over {expert} answers",
        right as f64 / total.max(1) as f64,
        expert_right as f64 / expert.max(1) as f64
    );
    Ok(Status::Ok)
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Annotation log (1-based ids) to fit on.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Split seed; selects the labeled set used for initialisation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "enhanced")]
    pub representation: Representation,
    /// Where to write the model checkpoint.
    #[arg(long)]
    pub out: PathBuf,
}

fn build_table(ds: &Dataset, split: &DataSplit, representation: Representation, settings: &RunSettings) -> anyhow::Result<FeatureTable> {
    let reference = match representation {
        Representation::Enhanced => {
            let k = settings.k.min(split.initial_labeled.len());
            Some(ReferenceIndex::from_dataset(ds, &split.initial_labeled, k)?)
        }
        Representation::Plain => None,
    };
    Ok(FeatureTable::build(ds, representation, reference.as_ref(), settings.mode)?)
}

fn read_log(path: &Path) -> anyhow::Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    AnnotationStore::parse_log_csv(&text).with_context(|| format!("invalid annotation log {}", path.display()))
}

pub fn train(args: &TrainArgs) -> anyhow::Result<Status> {
    let r = args.run.resolve()?;
    let ds = &r.dataset;
    let split = DataSplit::new(ds.len(), r.settings.fractions, args.seed)?;
    let table = build_table(ds, &split, args.representation, &r.settings)?;
    let records = read_log(&args.annotations)?;
    let n_annotators = records
        .iter()
        .map(|rec| rec.annotator + 1)
        .max()
        .unwrap_or(0)
        .max(r.settings.n_annotators);
    let mut store = AnnotationStore::new(ds.len(), ds.n_labels(), n_annotators);
    for rec in records {
        store.add_annotation(rec)?;
    }
    let mut model = init_model(
        ds,
        &table,
        &split.initial_labeled,
        &store,
        r.settings.init_lambda,
        &r.settings.init,
        r.settings.mode,
    )?;
    model.lambda = r.settings.lambda;
    let known = KnownTruth::from_dataset(ds, &split.initial_labeled);
    let fits = model.fit_all(&store, &table, &known, &r.settings.em, r.settings.mode)?;
    for (l, fit) in fits.iter().enumerate() {
        eprintln!(
            "label {}: {} EM iterations, converged {}, log-likelihood {:.4}",
            l + 1,
            fit.iterations,
            fit.converged,
            fit.trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    model.save(&args.out)?;
    let weights: Vec<&[f64]> = model.per_label.iter().map(|m| m.w0.as_slice()).collect();
    let f1 = evaluate_classifiers(&weights, &table, ds, &split.test)?;
    println!("{}", serde_json::json!({ "model": args.out, "test_micro_f1": f1 }));
    Ok(Status::Ok)
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Model checkpoint written by `train` or `replay`.
    #[arg(long)]
    pub model: PathBuf,
    /// Split seed the model was trained with.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    micro_f1: f64,
    test_instances: usize,
    representation: Representation,
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<Status> {
    let r = args.run.resolve()?;
    let ds = &r.dataset;
    let model = CrowdModel::load(&args.model).with_context(|| format!("cannot load model {}", args.model.display()))?;
    let split = DataSplit::new(ds.len(), r.settings.fractions, args.seed)?;
    let table = build_table(ds, &split, model.representation, &r.settings)?;
    let weights: Vec<&[f64]> = model.per_label.iter().map(|m| m.w0.as_slice()).collect();
    let f1 = evaluate_classifiers(&weights, &table, ds, &split.test)?;
    let report = EvalReport {
        micro_f1: f1,
        test_instances: split.test.len(),
        representation: model.representation,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(Status::Ok)
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "mac")]
    pub method: Method,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Full annotation log of the run, initial annotations included.
    #[arg(long)]
    pub log: PathBuf,
    /// Directory for the replayed curve, log and model.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Re-runs a strategy with every answer taken from a recorded log.
pub fn replay(args: &ReplayArgs) -> anyhow::Result<Status> {
    let r = args.run.resolve()?;
    let records = read_log(&args.log)?;
    let n_records = records.len();
    let mut settings = r.settings.clone();
    settings.n_annotators = records
        .iter()
        .map(|rec| rec.annotator + 1)
        .max()
        .unwrap_or(0)
        .max(settings.n_annotators);
    let split = DataSplit::new(r.dataset.len(), settings.fractions, args.seed)?;
    let output = replay_records(&r.dataset, &split, args.method, &settings, args.seed, records)?;
    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("curve.csv"), output.curve.to_csv())?;
    fs::write(args.out_dir.join("log.csv"), output.store.to_log_csv())?;
    if let Some(model) = &output.model {
        model.save(args.out_dir.join("model.txt"))?;
    }
    let replayed = output.store.len();
    if replayed != n_records {
        bail!("log has {n_records} records but the replay consumed {replayed}");
    }
    let last = output.curve.final_point().context("replay produced no checkpoint")?;
    println!("replayed {} queries; final micro-F1 {:.4}", last.queries, last.micro_f1);
    Ok(Status::Ok)
}

/// Feeds `records` in order: the initial annotations first, then one record
/// per query. Stops when the log runs out.
pub fn replay_records(
    ds: &Dataset,
    split: &DataSplit,
    method: Method,
    settings: &RunSettings,
    seed: u64,
    records: Vec<AnnotationRecord>,
) -> anyhow::Result<RunOutput> {
    let script = records
        .into_iter()
        .map(|rec| (QueryTriple::new(rec.instance, rec.label, rec.annotator), rec.value))
        .collect();
    let mut channel = ScriptedChannel::new(script);
    let mut session = ActiveSession::new(ds, split.clone(), method, settings.clone(), seed, &mut channel)?;
    while channel.remaining() > 0 && session.step(&mut channel)? {}
    session.finish()?;
    Ok(session.into_output())
}
