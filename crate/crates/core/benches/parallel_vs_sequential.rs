use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use crowdal::dataset::synthetic::{generate, SyntheticConfig};
use crowdal::enhance::ReferenceIndex;
use crowdal::model::{init_model, KnownTruth};
use crowdal::*;

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn mode_name(mode: ExecMode) -> &'static str {
    match mode {
        ExecMode::Sequential => "sequential",
        ExecMode::Parallel => "parallel",
    }
}

fn dataset(n: usize) -> Dataset {
    generate(&SyntheticConfig {
        n,
        dim: 20,
        n_labels: 6,
        seed: 1,
        ..Default::default()
    })
    .unwrap()
}

fn feature_table(c: &mut Criterion) {
    let ds = dataset(4000);
    let split = DataSplit::new(ds.len(), SplitFractions::default(), 1).unwrap();
    let index = ReferenceIndex::from_dataset(&ds, &split.initial_labeled, 10).unwrap();
    let mut group = c.benchmark_group("enhanced_feature_table");
    for mode in MODES {
        group.bench_function(BenchmarkId::from_parameter(mode_name(mode)), |b| {
            b.iter(|| FeatureTable::build(&ds, Representation::Enhanced, Some(&index), mode).unwrap())
        });
    }
    group.finish();
}

fn em_refit(c: &mut Criterion) {
    let ds = dataset(1500);
    let settings = RunSettings::synthetic_benchmark();
    let split = DataSplit::new(ds.len(), settings.fractions, 2).unwrap();
    let table = FeatureTable::build(&ds, Representation::Plain, None, ExecMode::Sequential).unwrap();
    let mut sim = build_simulators(&ds, 3, 1.0, 2, ExecMode::Sequential).unwrap();
    let mut store = AnnotationStore::new(ds.len(), ds.n_labels(), 3);
    for &i in split.initial_labeled.iter().chain(&split.unlabeled_pool) {
        for l in 0..ds.n_labels() {
            for j in 0..3 {
                let a = sim.request(&QueryTriple::new(i, l, j)).unwrap();
                store.add(i, l, a.annotator, a.value).unwrap();
            }
        }
    }
    let known = KnownTruth::from_dataset(&ds, &split.initial_labeled);
    let model = init_model(&ds, &table, &split.initial_labeled, &store, 1.0, &settings.init, ExecMode::Sequential).unwrap();
    let mut group = c.benchmark_group("em_fit_all_labels");
    group.sample_size(10);
    for mode in MODES {
        group.bench_function(BenchmarkId::from_parameter(mode_name(mode)), |b| {
            b.iter(|| {
                let mut m = model.clone();
                m.fit_all(&store, &table, &known, &settings.em, mode).unwrap()
            })
        });
    }
    group.finish();
}

fn benchmark_grid(c: &mut Criterion) {
    let ds = generate(&SyntheticConfig::default()).unwrap();
    let mut group = c.benchmark_group("benchmark_grid");
    group.sample_size(10);
    for mode in MODES {
        let settings = RunSettings {
            budget: 100,
            mode,
            ..RunSettings::synthetic_benchmark()
        };
        let config = BenchmarkConfig::new(vec![Method::Mac, Method::McrRd, Method::SmvRd], vec![0, 1], settings);
        group.bench_function(BenchmarkId::from_parameter(mode_name(mode)), |b| {
            b.iter(|| run_benchmark(&ds, &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, feature_table, em_refit, benchmark_grid);
criterion_main!(benches);
