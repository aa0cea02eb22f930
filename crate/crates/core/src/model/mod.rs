//! The multi-label crowd model: one independent [`LabelModel`] per label.

mod checkpoint;
mod features;
mod label;

pub use features::{FeatureTable, Representation};
pub use label::{
    e_step, fit_em, m_step, observed_log_likelihood, q_gradient, q_objective, BatchItem, EmOptions,
    EmOutcome, KnownTruth, LabelBatch, LabelModel, MStepOutcome, QGradient,
};

use crate::dataset::{AnnotationStore, Dataset};
use crate::error::{Error, Result};
use crate::linear::{self, AscentOptions, SoftExample};
use crate::par::{self, ExecMode};

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdModel {
    pub per_label: Vec<LabelModel>,
    pub lambda: f64,
    pub representation: Representation,
    pub classifier_dim: usize,
    pub annotator_dim: usize,
}

impl CrowdModel {
    pub fn zeros(
        n_labels: usize,
        n_annotators: usize,
        table: &FeatureTable,
        lambda: f64,
    ) -> Self {
        CrowdModel {
            per_label: (0..n_labels)
                .map(|_| LabelModel::zeros(table.classifier_dim(), table.annotator_dim(), n_annotators))
                .collect(),
            lambda,
            representation: table.representation(),
            classifier_dim: table.classifier_dim(),
            annotator_dim: table.annotator_dim(),
        }
    }

    pub fn n_labels(&self) -> usize {
        self.per_label.len()
    }

    pub fn n_annotators(&self) -> usize {
        self.per_label.first().map_or(0, |m| m.n_annotators())
    }

    pub fn label(&self, label: usize) -> &LabelModel {
        &self.per_label[label]
    }

    pub fn classifier_posterior(&self, label: usize, x: &[f64]) -> Result<f64> {
        self.per_label[label].classifier_posterior(x)
    }

    pub fn expertise(&self, label: usize, annotator: usize, x: &[f64]) -> Result<f64> {
        self.per_label[label].expertise(annotator, x)
    }

    /// Posterior of `z = +1` for one instance given everything in the store.
    pub fn posterior(
        &self,
        store: &AnnotationStore,
        table: &FeatureTable,
        instance: usize,
        label: usize,
    ) -> Result<f64> {
        self.per_label[label].posterior(
            table.classifier(instance),
            table.annotator(instance),
            store.cell(instance, label),
        )
    }

    /// Refits one label by EM from its current weights.
    pub fn fit_label(
        &mut self,
        label: usize,
        store: &AnnotationStore,
        table: &FeatureTable,
        opts: &EmOptions,
    ) -> Result<EmOutcome> {
        self.fit_label_with_known(label, store, table, &KnownTruth::new(self.n_labels()), opts)
    }

    /// Refits one label by EM with the posteriors of `known` instances
    /// fixed to their ground truth.
    pub fn fit_label_with_known(
        &mut self,
        label: usize,
        store: &AnnotationStore,
        table: &FeatureTable,
        known: &KnownTruth,
        opts: &EmOptions,
    ) -> Result<EmOutcome> {
        let batch = LabelBatch::from_store_with_known(store, table, label, known);
        let out = fit_em(&self.per_label[label], &batch, self.lambda, opts)?;
        self.per_label[label] = out.model.clone();
        Ok(out)
    }

    /// Refits every label; labels are independent and may run in parallel.
    pub fn fit_all(
        &mut self,
        store: &AnnotationStore,
        table: &FeatureTable,
        known: &KnownTruth,
        opts: &EmOptions,
        mode: ExecMode,
    ) -> Result<Vec<EmOutcome>> {
        let lambda = self.lambda;
        let results = par::map_indexed(mode, self.n_labels(), |l| {
            let batch = LabelBatch::from_store_with_known(store, table, l, known);
            fit_em(&self.per_label[l], &batch, lambda, opts)
        });
        let mut out = Vec::with_capacity(results.len());
        for (l, r) in results.into_iter().enumerate() {
            let r = r?;
            self.per_label[l] = r.model.clone();
            out.push(r);
        }
        Ok(out)
    }
}

/// Initial weights from the initial labeled set.
///
/// The classifier for each label is fit to the ground truth of the labeled
/// instances. Annotator `j`'s expertise model is fit to whether its
/// annotations agreed with the ground truth; an annotator with no
/// annotations on a label starts at the zero vector (expertise 0.5).
pub fn init_model(
    ds: &Dataset,
    table: &FeatureTable,
    initial_labeled: &[usize],
    store: &AnnotationStore,
    lambda: f64,
    opts: &AscentOptions,
    mode: ExecMode,
) -> Result<CrowdModel> {
    if initial_labeled.is_empty() {
        return Err(Error::Empty("initial labeled set"));
    }
    let n_annotators = store.n_annotators();
    let fitted = par::map_indexed(mode, ds.n_labels(), |l| -> Result<LabelModel> {
        let targets: Vec<f64> = initial_labeled
            .iter()
            .map(|&i| if ds.truth(i, l).is_pos() { 1.0 } else { 0.0 })
            .collect();
        let examples: Vec<SoftExample<'_>> = initial_labeled
            .iter()
            .zip(&targets)
            .map(|(&i, &t)| SoftExample::new(table.classifier(i), t))
            .collect();
        let w0 = linear::train_logistic(&examples, lambda, opts)?.weights;

        let mut annotators = Vec::with_capacity(n_annotators);
        for j in 0..n_annotators {
            let examples: Vec<SoftExample<'_>> = initial_labeled
                .iter()
                .filter_map(|&i| {
                    store.cell(i, l).iter().find(|&&(a, _)| a == j).map(|&(_, y)| {
                        let agree = if y == ds.truth(i, l) { 1.0 } else { 0.0 };
                        SoftExample::new(table.annotator(i), agree)
                    })
                })
                .collect();
            let w = if examples.is_empty() {
                vec![0.0; table.annotator_dim()]
            } else {
                linear::train_logistic(&examples, lambda, opts)?.weights
            };
            annotators.push(w);
        }
        Ok(LabelModel { w0, annotators })
    });
    let per_label = fitted.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CrowdModel {
        per_label,
        lambda,
        representation: table.representation(),
        classifier_dim: table.classifier_dim(),
        annotator_dim: table.annotator_dim(),
    })
}
