//! One label's crowd model and its EM fit.
//!
//! For instance `i` with classifier input `xc_i`, annotator input `xa_i` and
//! annotations `y_ij`:
//!
//! ```text
//! p(z_i = +1 | x_i)          = sigmoid(w0' xc_i)
//! p(y_ij = z_i | x_i)        = sigmoid(w_j' xa_i)          (expertise)
//! p(z_i = +1 | x_i, {y_ij})  ∝ sigmoid(a) * prod_{y=+1} sigmoid(b_j) * prod_{y=-1} sigmoid(-b_j)
//! ```
//!
//! with `a = w0'xc_i`, `b_j = w_j'xa_i`. The M-step objective is
//!
//! ```text
//! Q = sum_i [a_i p_i - ln(1 + e^a_i)] + sum_ij [b_ij p_i y_ij - ln(1 + e^(b_ij y_ij))]
//!     - (lambda / 2) (|w0|^2 + sum_j |w_j|^2)
//! ```
//!
//! Each `w_j` term equals a soft-target logistic likelihood with target
//! `P(z_i = y_ij)`, so the M-step runs the shared trainer block by block.

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationStore, Bipolar};
use crate::error::{check_dim, Result};
use crate::linear::{self, dot, log_sigmoid, sigmoid, softplus, squared_norm, AscentOptions, SoftExample};

use super::features::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    /// Classifier weights over the classifier representation.
    pub w0: Vec<f64>,
    /// One expertise weight vector per annotator, over annotator inputs.
    pub annotators: Vec<Vec<f64>>,
}

impl LabelModel {
    pub fn zeros(classifier_dim: usize, annotator_dim: usize, n_annotators: usize) -> Self {
        LabelModel {
            w0: vec![0.0; classifier_dim],
            annotators: vec![vec![0.0; annotator_dim]; n_annotators],
        }
    }

    pub fn n_annotators(&self) -> usize {
        self.annotators.len()
    }

    /// `sigmoid(w0' x)`.
    pub fn classifier_posterior(&self, x: &[f64]) -> Result<f64> {
        linear::predict_prob(&self.w0, x)
    }

    /// Probability that annotator `j` reports the true label on `x`.
    pub fn expertise(&self, annotator: usize, x: &[f64]) -> Result<f64> {
        linear::predict_prob(&self.annotators[annotator], x)
    }

    fn penalty(&self) -> f64 {
        squared_norm(&self.w0) + self.annotators.iter().map(|w| squared_norm(w)).sum::<f64>()
    }

    /// Unnormalised log joint of `(z = +1, y)` and `(z = -1, y)`.
    fn log_joint(&self, xc: &[f64], xa: &[f64], annotations: &[(usize, Bipolar)]) -> (f64, f64) {
        let a = dot(&self.w0, xc);
        let mut pos = log_sigmoid(a);
        let mut neg = log_sigmoid(-a);
        for &(j, y) in annotations {
            let b = dot(&self.annotators[j], xa);
            let (agree, disagree) = (log_sigmoid(b), log_sigmoid(-b));
            match y {
                Bipolar::Pos => {
                    pos += agree;
                    neg += disagree;
                }
                Bipolar::Neg => {
                    pos += disagree;
                    neg += agree;
                }
            }
        }
        (pos, neg)
    }

    /// Posterior `p(z = +1 | x, annotations)` for a single instance.
    pub fn posterior(&self, xc: &[f64], xa: &[f64], annotations: &[(usize, Bipolar)]) -> Result<f64> {
        check_dim(self.w0.len(), xc.len())?;
        if let Some(w) = self.annotators.first() {
            check_dim(w.len(), xa.len())?;
        }
        let (pos, neg) = self.log_joint(xc, xa, annotations);
        Ok(sigmoid(pos - neg))
    }
}

/// Ground-truth labels for a subset of instances, such as the initial
/// labeled set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnownTruth {
    n_labels: usize,
    by_instance: std::collections::BTreeMap<usize, Vec<Bipolar>>,
}

impl KnownTruth {
    pub fn new(n_labels: usize) -> Self {
        KnownTruth {
            n_labels,
            by_instance: Default::default(),
        }
    }

    pub fn from_dataset(ds: &crate::dataset::Dataset, indices: &[usize]) -> Self {
        let mut known = KnownTruth::new(ds.n_labels());
        for &i in indices {
            known.by_instance.insert(i, ds.truths(i).to_vec());
        }
        known
    }

    pub fn insert(&mut self, instance: usize, truths: Vec<Bipolar>) -> Result<()> {
        check_dim(self.n_labels, truths.len())?;
        self.by_instance.insert(instance, truths);
        Ok(())
    }

    pub fn get(&self, instance: usize, label: usize) -> Option<Bipolar> {
        self.by_instance.get(&instance).and_then(|t| t.get(label).copied())
    }

    pub fn instances(&self) -> impl Iterator<Item = usize> + '_ {
        self.by_instance.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.by_instance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_instance.is_empty()
    }
}

/// The instances annotated on one label, with their inputs and annotations.
#[derive(Debug, Clone)]
pub struct LabelBatch<'a> {
    pub items: Vec<BatchItem<'a>>,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub instance: usize,
    pub classifier: &'a [f64],
    pub annotator: &'a [f64],
    pub annotations: &'a [(usize, Bipolar)],
    /// Ground truth, when the instance came with one. Its posterior is then
    /// fixed to the known value instead of inferred.
    pub known: Option<Bipolar>,
}

impl<'a> LabelBatch<'a> {
    /// Every instance with at least one annotation on `label`, ascending.
    pub fn from_store(store: &'a AnnotationStore, table: &'a FeatureTable, label: usize) -> Self {
        let items = store
            .annotated_instances(label)
            .map(|i| BatchItem {
                instance: i,
                classifier: table.classifier(i),
                annotator: table.annotator(i),
                annotations: store.cell(i, label),
                known: None,
            })
            .collect();
        LabelBatch { items }
    }

    /// Like [`LabelBatch::from_store`], with known truths attached. Instances
    /// with a known truth join the batch even without annotations.
    pub fn from_store_with_known(
        store: &'a AnnotationStore,
        table: &'a FeatureTable,
        label: usize,
        known: &KnownTruth,
    ) -> Self {
        let mut ids: Vec<usize> = store.annotated_instances(label).collect();
        ids.extend(known.instances().filter(|&i| store.cell(i, label).is_empty()));
        ids.sort_unstable();
        let items = ids
            .into_iter()
            .map(|i| BatchItem {
                instance: i,
                classifier: table.classifier(i),
                annotator: table.annotator(i),
                annotations: store.cell(i, label),
                known: known.get(i, label),
            })
            .collect();
        LabelBatch { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn check(&self, model: &LabelModel) -> Result<()> {
        for item in &self.items {
            check_dim(model.w0.len(), item.classifier.len())?;
            for &(j, _) in item.annotations {
                if j >= model.n_annotators() {
                    return Err(crate::error::Error::invalid(format!(
                        "annotation by annotator {j} but model has {}",
                        model.n_annotators()
                    )));
                }
                check_dim(model.annotators[j].len(), item.annotator.len())?;
            }
        }
        Ok(())
    }
}

/// E-step: posterior `p(z_i = +1)` for every batch item, in batch order.
pub fn e_step(model: &LabelModel, batch: &LabelBatch<'_>) -> Result<Vec<f64>> {
    batch.check(model)?;
    Ok(batch
        .items
        .iter()
        .map(|it| match it.known {
            Some(z) => if z.is_pos() { 1.0 } else { 0.0 },
            None => {
                let (pos, neg) = model.log_joint(it.classifier, it.annotator, it.annotations);
                sigmoid(pos - neg)
            }
        })
        .collect())
}

/// Penalised observed-data log-likelihood `ln P(y | x, w) - (lambda/2)|w|^2`,
/// marginalising each unknown `z_i` over both values. Items with a known
/// truth contribute the joint log-probability at that truth.
pub fn observed_log_likelihood(model: &LabelModel, batch: &LabelBatch<'_>, lambda: f64) -> Result<f64> {
    batch.check(model)?;
    let data: f64 = batch
        .items
        .iter()
        .map(|it| {
            let (pos, neg) = model.log_joint(it.classifier, it.annotator, it.annotations);
            match it.known {
                Some(Bipolar::Pos) => pos,
                Some(Bipolar::Neg) => neg,
                None => {
                    let m = pos.max(neg);
                    m + ((pos - m).exp() + (neg - m).exp()).ln()
                }
            }
        })
        .sum();
    Ok(data - 0.5 * lambda * model.penalty())
}

/// Expected penalised complete-data log-likelihood under `posteriors`.
pub fn q_objective(model: &LabelModel, posteriors: &[f64], batch: &LabelBatch<'_>, lambda: f64) -> Result<f64> {
    batch.check(model)?;
    check_dim(batch.len(), posteriors.len())?;
    let mut q = 0.0;
    for (it, &p) in batch.items.iter().zip(posteriors) {
        let a = dot(&model.w0, it.classifier);
        q += a * p - softplus(a);
        for &(j, y) in it.annotations {
            let by = dot(&model.annotators[j], it.annotator) * y.as_f64();
            q += by * p - softplus(by);
        }
    }
    Ok(q - 0.5 * lambda * model.penalty())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QGradient {
    pub w0: Vec<f64>,
    pub annotators: Vec<Vec<f64>>,
}

/// Gradient of [`q_objective`], prior term included.
pub fn q_gradient(model: &LabelModel, posteriors: &[f64], batch: &LabelBatch<'_>, lambda: f64) -> Result<QGradient> {
    batch.check(model)?;
    check_dim(batch.len(), posteriors.len())?;
    let mut g0: Vec<f64> = model.w0.iter().map(|w| -lambda * w).collect();
    let mut gj: Vec<Vec<f64>> = model
        .annotators
        .iter()
        .map(|w| w.iter().map(|v| -lambda * v).collect())
        .collect();
    for (it, &p) in batch.items.iter().zip(posteriors) {
        let r0 = p - sigmoid(dot(&model.w0, it.classifier));
        for (g, x) in g0.iter_mut().zip(it.classifier) {
            *g += r0 * x;
        }
        for &(j, y) in it.annotations {
            let y = y.as_f64();
            let r = (p - sigmoid(dot(&model.annotators[j], it.annotator) * y)) * y;
            for (g, x) in gj[j].iter_mut().zip(it.annotator) {
                *g += r * x;
            }
        }
    }
    Ok(QGradient {
        w0: g0,
        annotators: gj,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutcome {
    pub model: LabelModel,
    /// Some block's line search ran out of backtracks; its best iterate was kept.
    pub line_search_failed: bool,
}

/// M-step: gradient ascent on `Q`, one parameter block at a time, warm
/// started from `model`.
pub fn m_step(
    model: &LabelModel,
    posteriors: &[f64],
    batch: &LabelBatch<'_>,
    lambda: f64,
    opts: &AscentOptions,
) -> Result<MStepOutcome> {
    batch.check(model)?;
    check_dim(batch.len(), posteriors.len())?;
    let mut failed = false;

    let classifier_examples: Vec<SoftExample<'_>> = batch
        .items
        .iter()
        .zip(posteriors)
        .map(|(it, &p)| SoftExample::new(it.classifier, p))
        .collect();
    let fit = linear::train_logistic_from(&model.w0, &classifier_examples, lambda, opts)?;
    failed |= fit.line_search_failed;
    let w0 = fit.weights;

    let mut per_annotator: Vec<Vec<SoftExample<'_>>> = vec![Vec::new(); model.n_annotators()];
    for (it, &p) in batch.items.iter().zip(posteriors) {
        for &(j, y) in it.annotations {
            // P(z_i = y_ij)
            let target = if y.is_pos() { p } else { 1.0 - p };
            per_annotator[j].push(SoftExample::new(it.annotator, target));
        }
    }
    let mut annotators = Vec::with_capacity(model.n_annotators());
    for (w, examples) in model.annotators.iter().zip(&per_annotator) {
        let fit = linear::train_logistic_from(w, examples, lambda, opts)?;
        failed |= fit.line_search_failed;
        annotators.push(fit.weights);
    }
    Ok(MStepOutcome {
        model: LabelModel { w0, annotators },
        line_search_failed: failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_em_iters: usize,
    /// Stop when the penalised log-likelihood gains less than this fraction
    /// of its magnitude.
    pub em_tolerance: f64,
    pub m_step: AscentOptions,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_em_iters: 100,
            em_tolerance: 1e-6,
            m_step: AscentOptions {
                max_iters: 50,
                ..AscentOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOutcome {
    pub model: LabelModel,
    /// Number of E/M rounds performed.
    pub iterations: usize,
    pub converged: bool,
    /// Penalised observed log-likelihood before the first round and after each.
    pub trace: Vec<f64>,
    pub line_search_failed: bool,
}

/// Alternates E- and M-steps from `model` until the penalised observed
/// log-likelihood stalls or `max_em_iters` rounds have run.
pub fn fit_em(model: &LabelModel, batch: &LabelBatch<'_>, lambda: f64, opts: &EmOptions) -> Result<EmOutcome> {
    let mut current = model.clone();
    let mut ll = observed_log_likelihood(&current, batch, lambda)?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut failed = false;
    let mut iterations = 0;
    while iterations < opts.max_em_iters {
        let post = e_step(&current, batch)?;
        let step = m_step(&current, &post, batch, lambda, &opts.m_step)?;
        failed |= step.line_search_failed;
        current = step.model;
        let next = observed_log_likelihood(&current, batch, lambda)?;
        trace.push(next);
        iterations += 1;
        let gain = next - ll;
        ll = next;
        if gain <= opts.em_tolerance * ll.abs() {
            converged = true;
            break;
        }
    }
    if failed {
        log::debug!("line search exhausted during EM fit ({iterations} rounds)");
    }
    Ok(EmOutcome {
        model: current,
        iterations,
        converged,
        trace,
        line_search_failed: failed,
    })
}
