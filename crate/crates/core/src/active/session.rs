use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::Eligibility;
use super::strategy::{Aggregation, Method, Selection, StrategyConfig};
use super::{majority_vote, select_annotator, select_instance, select_label, Annotation, AnnotationChannel, QueryTriple};
use crate::dataset::{AnnotationStore, Bipolar, DataSplit, Dataset, SplitFractions};
use crate::enhance::ReferenceIndex;
use crate::error::{Error, Result};
use crate::eval::{evaluate_classifiers, CurvePoint, LearningCurve};
use crate::linear::{self, AscentOptions, SoftExample};
use crate::model::{init_model, CrowdModel, EmOptions, FeatureTable, KnownTruth, Representation};
use crate::par::{self, ExecMode};
use crate::sim::seed_initial_annotations;

const SELECTION_SALT: u64 = 0x5e1e_c7ed_a11c_e5a1;

/// Hyperparameters shared by every strategy in a run or benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub lambda: f64,
    /// Regularisation of the initial fit on the labeled set.
    pub init_lambda: f64,
    pub k: usize,
    pub xi: f64,
    pub budget: usize,
    pub checkpoint_every: usize,
    pub fractions: SplitFractions,
    pub n_annotators: usize,
    pub refit_every_query: bool,
    pub em: EmOptions,
    pub init: AscentOptions,
    #[serde(skip)]
    pub mode: ExecMode,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            lambda: 1e-3,
            init_lambda: 1.0,
            k: 10,
            xi: 0.5,
            budget: 1000,
            checkpoint_every: 50,
            fractions: SplitFractions::default(),
            n_annotators: 3,
            refit_every_query: false,
            em: EmOptions::default(),
            init: AscentOptions::default(),
            mode: ExecMode::default(),
        }
    }
}

impl RunSettings {
    /// The full-scale protocol: checkpoints every 200 queries up to 8,000.
    pub fn paper() -> Self {
        RunSettings {
            budget: 8000,
            checkpoint_every: 200,
            ..RunSettings::default()
        }
    }

    /// Settings for the 400-instance synthetic benchmark: stronger
    /// regularisation and a neighbourhood smaller than the 10-instance
    /// labeled set.
    pub fn synthetic_benchmark() -> Self {
        RunSettings {
            lambda: 1.0,
            k: 3,
            budget: 1000,
            checkpoint_every: 50,
            ..RunSettings::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if !(self.init_lambda.is_finite() && self.init_lambda >= 0.0) {
            return Err(Error::invalid(format!("init_lambda must be finite and non-negative, got {}", self.init_lambda)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::invalid(format!("xi must lie in (0, 1), got {}", self.xi)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every must be at least 1"));
        }
        if self.n_annotators == 0 {
            return Err(Error::invalid("need at least one annotator"));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("no query is pending")]
    NoPending,
    #[error(
        "annotation for instance {} label {} does not match the pending query (instance {} label {})",
        .submitted.instance + 1, .submitted.label + 1, .pending.instance + 1, .pending.label + 1
    )]
    Conflict {
        pending: QueryTriple,
        submitted: QueryTriple,
    },
    #[error("annotator {} has already answered instance {} label {}", .0.annotator + 1, .0.instance + 1, .0.label + 1)]
    AlreadyAnswered(QueryTriple),
    #[error(transparent)]
    Core(#[from] Error),
}

#[derive(Debug, Clone)]
enum Learner {
    Crowd(CrowdModel),
    Vote { weights: Vec<Vec<f64>>, dirty: Vec<bool> },
}

impl Learner {
    fn classifier(&self, label: usize) -> &[f64] {
        match self {
            Learner::Crowd(m) => &m.per_label[label].w0,
            Learner::Vote { weights, .. } => &weights[label],
        }
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub method: Method,
    pub seed: u64,
    pub curve: LearningCurve,
    pub store: AnnotationStore,
    pub initial_records: usize,
    pub model: Option<CrowdModel>,
    pub classifiers: Vec<Vec<f64>>,
}

impl RunOutput {
    /// Annotations obtained by queries, excluding the initial seeding.
    pub fn queried(&self) -> &[crate::dataset::AnnotationRecord] {
        &self.store.records()[self.initial_records..]
    }
}

/// One active-learning run as an explicit state machine: ask for the next
/// query, hand it to an annotator, record the answer.
#[derive(Debug, Clone)]
pub struct ActiveSession<'a> {
    ds: &'a Dataset,
    split: DataSplit,
    method: Method,
    settings: RunSettings,
    seed: u64,
    table: FeatureTable,
    store: AnnotationStore,
    eligibility: Eligibility,
    learner: Learner,
    rng: ChaCha8Rng,
    // [label][instance] posterior of z = +1, kept for active selection only
    posteriors: Option<Vec<Vec<f64>>>,
    candidates: Vec<usize>,
    known: KnownTruth,
    pending: Option<QueryTriple>,
    curve: Vec<CurvePoint>,
    avg_cardinality: f64,
    queries: usize,
    initial_records: usize,
}

impl<'a> ActiveSession<'a> {
    /// Builds features, seeds the initial annotations through `initial`,
    /// initialises the learner and records the zero-query checkpoint.
    pub fn new(
        ds: &'a Dataset,
        split: DataSplit,
        method: Method,
        settings: RunSettings,
        seed: u64,
        initial: &mut dyn AnnotationChannel,
    ) -> Result<Self> {
        settings.validate()?;
        let n = ds.len();
        for &i in split.initial_labeled.iter().chain(&split.unlabeled_pool).chain(&split.test) {
            if i >= n {
                return Err(Error::invalid(format!("split index {i} out of range for {n} instances")));
            }
        }
        if split.initial_labeled.is_empty() {
            return Err(Error::Empty("initial labeled set"));
        }
        let config = method.config();
        let reference = match config.representation {
            Representation::Enhanced => {
                let k = settings.k.min(split.initial_labeled.len());
                Some(ReferenceIndex::from_dataset(ds, &split.initial_labeled, k)?)
            }
            Representation::Plain => None,
        };
        let table = FeatureTable::build(ds, config.representation, reference.as_ref(), settings.mode)?;

        let mut store = AnnotationStore::new(n, ds.n_labels(), settings.n_annotators);
        seed_initial_annotations(&mut store, &split.initial_labeled, initial)?;
        let initial_records = store.len();

        let mut candidates: Vec<usize> = split.unlabeled_pool.iter().chain(&split.initial_labeled).copied().collect();
        candidates.sort_unstable();
        let eligibility = Eligibility::new(&store, &candidates);

        let learner = match config.aggregation {
            Aggregation::CrowdEm => {
                let mut model = init_model(
                    ds,
                    &table,
                    &split.initial_labeled,
                    &store,
                    settings.init_lambda,
                    &settings.init,
                    settings.mode,
                )?;
                model.lambda = settings.lambda;
                Learner::Crowd(model)
            }
            Aggregation::MajorityVote => {
                let weights = par::map_indexed(settings.mode, ds.n_labels(), |l| -> Result<Vec<f64>> {
                    let examples: Vec<SoftExample<'_>> = split
                        .initial_labeled
                        .iter()
                        .map(|&i| SoftExample::new(table.classifier(i), if ds.truth(i, l).is_pos() { 1.0 } else { 0.0 }))
                        .collect();
                    Ok(linear::train_logistic(&examples, settings.init_lambda, &settings.init)?.weights)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                Learner::Vote {
                    dirty: vec![false; ds.n_labels()],
                    weights,
                }
            }
        };

        let avg_cardinality = ds.label_cardinality(&split.initial_labeled);
        let split_initial = split.initial_labeled.clone();
        let mut session = ActiveSession {
            ds,
            split,
            method,
            settings,
            seed,
            table,
            store,
            eligibility,
            learner,
            rng: ChaCha8Rng::seed_from_u64(seed ^ SELECTION_SALT),
            posteriors: None,
            candidates,
            known: KnownTruth::from_dataset(ds, &split_initial),
            pending: None,
            curve: Vec::new(),
            avg_cardinality,
            queries: 0,
            initial_records,
        };
        if config.selection == Selection::Active {
            let all = (0..ds.n_labels())
                .map(|l| session.label_posteriors(l))
                .collect::<Result<Vec<_>>>()?;
            session.posteriors = Some(all);
        }
        session.checkpoint()?;
        Ok(session)
    }

    pub fn dataset(&self) -> &Dataset {
        self.ds
    }

    pub fn split(&self) -> &DataSplit {
        &self.split
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn config(&self) -> StrategyConfig {
        self.method.config()
    }

    pub fn settings(&self) -> &RunSettings {
        &self.settings
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn table(&self) -> &FeatureTable {
        &self.table
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    pub fn eligibility(&self) -> &Eligibility {
        &self.eligibility
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn budget(&self) -> usize {
        self.settings.budget
    }

    pub fn initial_records(&self) -> usize {
        self.initial_records
    }

    pub fn avg_cardinality(&self) -> f64 {
        self.avg_cardinality
    }

    pub fn pending(&self) -> Option<QueryTriple> {
        self.pending
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.curve
    }

    pub fn model(&self) -> Option<&CrowdModel> {
        match &self.learner {
            Learner::Crowd(m) => Some(m),
            Learner::Vote { .. } => None,
        }
    }

    pub fn classifier(&self, label: usize) -> &[f64] {
        self.learner.classifier(label)
    }

    /// True once the budget is spent or nothing is left to ask.
    pub fn is_finished(&self) -> bool {
        self.queries >= self.settings.budget || self.eligibility.is_empty()
    }

    /// Mean expertise of every annotator over the current pool for `label`.
    /// `None` for majority-vote strategies, which model no expertise.
    pub fn mean_expertise(&self, label: usize) -> Result<Option<Vec<f64>>> {
        let Learner::Crowd(model) = &self.learner else {
            return Ok(None);
        };
        if label >= self.ds.n_labels() {
            return Err(Error::invalid(format!("label {label} out of range")));
        }
        let pool: Vec<usize> = self.eligibility.pool().collect();
        let mut means = Vec::with_capacity(model.n_annotators());
        for j in 0..model.n_annotators() {
            if pool.is_empty() {
                means.push(0.5);
                continue;
            }
            let mut sum = 0.0;
            for &i in &pool {
                sum += model.expertise(label, j, self.table.annotator(i))?;
            }
            means.push(sum / pool.len() as f64);
        }
        Ok(Some(means))
    }

    /// The query the session wants answered next; the same triple is
    /// returned until it is recorded.
    pub fn next_query(&mut self) -> Result<Option<QueryTriple>> {
        if let Some(q) = self.pending {
            return Ok(Some(q));
        }
        if self.is_finished() {
            return Ok(None);
        }
        let q = match self.config().selection {
            Selection::Random => self.eligibility.sample_uniform(&mut self.rng).ok_or(Error::Empty("eligible triples"))?,
            Selection::Active => self.select_active()?,
        };
        self.pending = Some(q);
        Ok(Some(q))
    }

    fn select_active(&mut self) -> Result<QueryTriple> {
        let posteriors = self.posteriors.as_ref().ok_or(Error::Empty("posterior cache"))?;
        let pool: Vec<usize> = self.eligibility.pool().collect();
        let pos_counts: Vec<usize> = pool
            .iter()
            .map(|&i| posteriors.iter().filter(|p| p[i] > 0.5).count())
            .collect();
        let anno_counts: Vec<usize> = pool.iter().map(|&i| self.store.anno_count(i)).collect();
        let i = select_instance(&pool, &pos_counts, &anno_counts, self.avg_cardinality, self.settings.xi)?;
        let labels: Vec<(usize, f64)> = self
            .eligibility
            .available_labels(i)
            .into_iter()
            .map(|l| (l, posteriors[l][i]))
            .collect();
        let l = select_label(&labels)?;
        let available = self.eligibility.available_annotators(i, l);
        let j = match &self.learner {
            Learner::Crowd(model) => {
                let x = self.table.annotator(i);
                let scored = available
                    .iter()
                    .map(|&j| Ok((j, model.expertise(l, j, x)?)))
                    .collect::<Result<Vec<_>>>()?;
                select_annotator(&scored)?
            }
            Learner::Vote { .. } => {
                if available.is_empty() {
                    return Err(Error::Empty("available annotator set"));
                }
                available[self.rng.gen_range(0..available.len())]
            }
        };
        Ok(QueryTriple::new(i, l, j))
    }

    /// Records the answer to the pending query.
    ///
    /// The instance and label must match the pending query. The annotator may
    /// differ (an operator override) as long as that annotator has not yet
    /// answered the pair; bookkeeping follows whoever actually answered.
    /// Nothing changes when an error is returned.
    pub fn record(&mut self, submitted: QueryTriple, value: Bipolar) -> Result<(), SessionError> {
        let pending = self.pending.ok_or(SessionError::NoPending)?;
        if (submitted.instance, submitted.label) != (pending.instance, pending.label) {
            return Err(SessionError::Conflict { pending, submitted });
        }
        if !self.eligibility.is_eligible(&submitted) {
            return Err(SessionError::AlreadyAnswered(submitted));
        }
        self.store.add(submitted.instance, submitted.label, submitted.annotator, value)?;
        self.eligibility.remove(&submitted)?;
        self.pending = None;
        self.queries += 1;
        self.update(submitted.label)?;
        if self.queries.is_multiple_of(self.settings.checkpoint_every) {
            self.checkpoint()?;
        }
        Ok(())
    }

    /// Asks `channel` for the next query's answer and records it. Returns
    /// `false` when the run is over. A channel failure leaves the query
    /// pending and the state untouched.
    pub fn step(&mut self, channel: &mut dyn AnnotationChannel) -> Result<bool> {
        let Some(q) = self.next_query()? else {
            return Ok(false);
        };
        let Annotation { annotator, value } = channel.request(&q)?;
        let answered = QueryTriple::new(q.instance, q.label, annotator);
        self.record(answered, value).map_err(|e| match e {
            SessionError::Core(e) => e,
            other => Error::Channel(other.to_string()),
        })?;
        Ok(true)
    }

    /// Runs until the budget is spent or the pool is exhausted, then adds a
    /// final checkpoint if the last query was not on the grid.
    pub fn run(&mut self, channel: &mut dyn AnnotationChannel) -> Result<()> {
        while self.step(channel)? {}
        self.finish()
    }

    pub fn finish(&mut self) -> Result<()> {
        if self.curve.last().map(|p| p.queries) != Some(self.queries) {
            self.checkpoint()?;
        }
        Ok(())
    }

    pub fn into_output(self) -> RunOutput {
        let classifiers = (0..self.ds.n_labels()).map(|l| self.learner.classifier(l).to_vec()).collect();
        let model = match self.learner {
            Learner::Crowd(m) => Some(m),
            Learner::Vote { .. } => None,
        };
        RunOutput {
            method: self.method,
            seed: self.seed,
            curve: LearningCurve {
                method: self.method.name().to_string(),
                seed: self.seed,
                points: self.curve,
            },
            store: self.store,
            initial_records: self.initial_records,
            model,
            classifiers,
        }
    }

    fn update(&mut self, label: usize) -> Result<()> {
        match &mut self.learner {
            Learner::Crowd(model) => {
                model.fit_label_with_known(label, &self.store, &self.table, &self.known, &self.settings.em)?;
            }
            Learner::Vote { dirty, .. } => {
                dirty[label] = true;
                if self.settings.refit_every_query {
                    self.refit_votes()?;
                }
            }
        }
        if self.posteriors.is_some() {
            let fresh = self.label_posteriors(label)?;
            if let Some(p) = self.posteriors.as_mut() {
                p[label] = fresh;
            }
        }
        Ok(())
    }

    /// Retrains every majority-vote classifier whose label received
    /// annotations since its last fit, warm-started.
    fn refit_votes(&mut self) -> Result<()> {
        let Learner::Vote { weights, dirty } = &mut self.learner else {
            return Ok(());
        };
        let (store, table, known) = (&self.store, &self.table, &self.known);
        let (lambda, opts) = (self.settings.lambda, &self.settings.init);
        let refits = par::map_indexed(self.settings.mode, weights.len(), |l| -> Result<Option<Vec<f64>>> {
            if !dirty[l] {
                return Ok(None);
            }
            let mut ids: Vec<usize> = store.annotated_instances(l).collect();
            ids.extend(known.instances().filter(|&i| store.cell(i, l).is_empty()));
            ids.sort_unstable();
            let examples: Vec<SoftExample<'_>> = ids
                .into_iter()
                .filter_map(|i| {
                    known
                        .get(i, l)
                        .or_else(|| majority_vote(store.cell(i, l).iter().map(|&(_, v)| v)))
                        .map(|z| SoftExample::new(table.classifier(i), if z.is_pos() { 1.0 } else { 0.0 }))
                })
                .collect();
            Ok(Some(linear::train_logistic_from(&weights[l], &examples, lambda, opts)?.weights))
        });
        for (l, r) in refits.into_iter().enumerate() {
            if let Some(w) = r? {
                weights[l] = w;
                dirty[l] = false;
            }
        }
        Ok(())
    }

    fn label_posteriors(&self, label: usize) -> Result<Vec<f64>> {
        let mut out = vec![f64::NAN; self.ds.len()];
        let values = par::map_slice(self.settings.mode, &self.candidates, |&i| match &self.learner {
            Learner::Crowd(model) => model.posterior(&self.store, &self.table, i, label),
            Learner::Vote { weights, .. } => linear::predict_prob(&weights[label], self.table.classifier(i)),
        });
        for (&i, v) in self.candidates.iter().zip(values) {
            out[i] = v?;
        }
        Ok(out)
    }

    fn checkpoint(&mut self) -> Result<()> {
        if matches!(self.learner, Learner::Vote { .. }) {
            let was_dirty = matches!(&self.learner, Learner::Vote { dirty, .. } if dirty.iter().any(|&d| d));
            self.refit_votes()?;
            if was_dirty && self.posteriors.is_some() {
                let all = (0..self.ds.n_labels())
                    .map(|l| self.label_posteriors(l))
                    .collect::<Result<Vec<_>>>()?;
                self.posteriors = Some(all);
            }
        }
        let weights: Vec<&[f64]> = (0..self.ds.n_labels()).map(|l| self.learner.classifier(l)).collect();
        let f1 = evaluate_classifiers(&weights, &self.table, self.ds, &self.split.test)?;
        self.curve.push(CurvePoint {
            queries: self.queries,
            micro_f1: f1,
        });
        Ok(())
    }
}

/// Runs one strategy to completion: initial annotations and all queries are
/// answered by `channel`.
pub fn run_strategy<C: AnnotationChannel>(
    ds: &Dataset,
    split: &DataSplit,
    method: Method,
    settings: &RunSettings,
    seed: u64,
    channel: &mut C,
) -> Result<RunOutput> {
    let mut session = ActiveSession::new(ds, split.clone(), method, settings.clone(), seed, channel)?;
    session.run(channel)?;
    Ok(session.into_output())
}
