//! Simulated crowd with instance-dependent expertise.
//!
//! For every label, a logistic model is fit on the whole dataset and its
//! probability outputs are clustered into `M` groups by 1-D k-means. Clusters
//! are ordered by ascending centre and annotator `j` is the expert on the
//! `j`-th one: there it always reports the truth, elsewhere it flips the
//! truth with probability 0.25.
//!
//! Annotation noise is counter-based: the uniform draw for annotator `j` on
//! `(instance, label)` sits at a fixed position of ChaCha stream `j`, so the
//! outcome does not depend on query order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::active::{Annotation, AnnotationChannel, QueryTriple};
use crate::dataset::{AnnotationStore, Bipolar, Dataset};
use crate::error::{Error, Result};
use crate::linear::{self, AscentOptions, SoftExample};
use crate::par::{self, ExecMode};

/// Flip probability outside an annotator's expert cluster.
pub const NON_EXPERT_FLIP: f64 = 0.25;

// Keeps the annotator key space apart from split shuffles on the same seed.
const STREAM_SALT: u64 = 0x5eed_a770_7a70_5a17;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans1d {
    pub assignments: Vec<usize>,
    pub centers: Vec<f64>,
    pub iterations: usize,
}

const KMEANS_MAX_ITERS: usize = 1000;

/// Lloyd's algorithm on scalars.
///
/// Centres start at the `(c + 0.5) / k` quantiles. A cluster left empty
/// takes the point farthest from its own centre (among points whose cluster
/// has more than one member). Stops when assignments repeat.
pub fn kmeans_1d(values: &[f64], k: usize) -> Result<KMeans1d> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if values.len() < k {
        return Err(Error::invalid(format!(
            "k-means needs at least k = {k} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means values must be finite"));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut centers: Vec<f64> = (0..k)
        .map(|c| sorted[(((c as f64 + 0.5) / k as f64) * n as f64) as usize])
        .collect();

    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut next: Vec<usize> = values
            .iter()
            .map(|&v| {
                let mut best = 0;
                for c in 1..k {
                    if (v - centers[c]).abs() < (v - centers[best]).abs() {
                        best = c;
                    }
                }
                best
            })
            .collect();

        let mut sizes = vec![0usize; k];
        for &a in &next {
            sizes[a] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&p| sizes[next[p]] > 1)
                .max_by(|&a, &b| {
                    let da = (values[a] - centers[next[a]]).abs();
                    let db = (values[b] - centers[next[b]]).abs();
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("n >= k leaves a cluster with two members");
            sizes[next[far]] -= 1;
            next[far] = c;
            sizes[c] = 1;
        }

        let mut sums = vec![0.0; k];
        for (&a, &v) in next.iter().zip(values) {
            sums[a] += v;
        }
        for c in 0..k {
            centers[c] = sums[c] / sizes[c] as f64;
        }
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(KMeans1d {
        assignments,
        centers,
        iterations,
    })
}

/// Per-label cluster of every instance, in ascending-centre order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// `[label][instance]` -> cluster index.
    pub per_label: Vec<Vec<usize>>,
    /// `[label][cluster]` -> centre, ascending.
    pub centers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedAnnotator {
    pub id: usize,
    /// Expert cluster per label.
    pub expert_cluster: Vec<usize>,
    pub flip_probability: f64,
    pub seed: u64,
}

impl SimulatedAnnotator {
    fn uniform(&self, instance: usize, label: usize, n_labels: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ STREAM_SALT);
        rng.set_stream(self.id as u64);
        // each f64 draw consumes two 32-bit words
        rng.set_word_pos(2 * (instance as u128 * n_labels as u128 + label as u128));
        rng.gen::<f64>()
    }
}

/// One annotator's answer for `(instance, label)`.
pub fn annotate(
    sim: &SimulatedAnnotator,
    instance: usize,
    label: usize,
    truth: Bipolar,
    assignment: &ClusterAssignment,
) -> Bipolar {
    if assignment.per_label[label][instance] == sim.expert_cluster[label] {
        return truth;
    }
    let n_labels = assignment.per_label.len();
    if sim.uniform(instance, label, n_labels) < sim.flip_probability {
        truth.flip()
    } else {
        truth
    }
}

/// The full simulated crowd for one dataset and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdSimulator {
    pub annotators: Vec<SimulatedAnnotator>,
    pub assignment: ClusterAssignment,
    pub seed: u64,
    n_labels: usize,
    truths: Vec<Bipolar>,
}

/// Builds `n_annotators` simulated annotators from the whole dataset.
pub fn build_simulators(
    ds: &Dataset,
    n_annotators: usize,
    lambda: f64,
    seed: u64,
    mode: ExecMode,
) -> Result<CrowdSimulator> {
    if n_annotators == 0 {
        return Err(Error::invalid("need at least one annotator"));
    }
    let inputs: Vec<Vec<f64>> = (0..ds.len())
        .map(|i| {
            let mut x = ds.features(i).to_vec();
            x.push(1.0);
            x
        })
        .collect();
    let per_label = par::map_indexed(mode, ds.n_labels(), |l| -> Result<(Vec<usize>, Vec<f64>)> {
        let examples: Vec<SoftExample<'_>> = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| SoftExample::new(x, if ds.truth(i, l).is_pos() { 1.0 } else { 0.0 }))
            .collect();
        let w = linear::train_logistic(&examples, lambda, &AscentOptions::default())?.weights;
        let probs: Vec<f64> = inputs.iter().map(|x| linear::sigmoid(linear::dot(&w, x))).collect();
        let km = kmeans_1d(&probs, n_annotators)?;
        let mut order: Vec<usize> = (0..n_annotators).collect();
        order.sort_by(|&a, &b| km.centers[a].total_cmp(&km.centers[b]).then(a.cmp(&b)));
        let mut rank = vec![0; n_annotators];
        for (r, &c) in order.iter().enumerate() {
            rank[c] = r;
        }
        let assignments = km.assignments.iter().map(|&c| rank[c]).collect();
        let centers = order.iter().map(|&c| km.centers[c]).collect();
        Ok((assignments, centers))
    });
    let mut assignment = ClusterAssignment {
        per_label: Vec::with_capacity(ds.n_labels()),
        centers: Vec::with_capacity(ds.n_labels()),
    };
    for r in per_label {
        let (a, c) = r?;
        assignment.per_label.push(a);
        assignment.centers.push(c);
    }
    let annotators = (0..n_annotators)
        .map(|j| SimulatedAnnotator {
            id: j,
            expert_cluster: vec![j; ds.n_labels()],
            flip_probability: NON_EXPERT_FLIP,
            seed,
        })
        .collect();
    let truths = (0..ds.len()).flat_map(|i| ds.truths(i).to_vec()).collect();
    Ok(CrowdSimulator {
        annotators,
        assignment,
        seed,
        n_labels: ds.n_labels(),
        truths,
    })
}

impl CrowdSimulator {
    pub fn n_annotators(&self) -> usize {
        self.annotators.len()
    }

    pub fn answer(&self, instance: usize, label: usize, annotator: usize) -> Bipolar {
        let truth = self.truths[instance * self.n_labels + label];
        annotate(&self.annotators[annotator], instance, label, truth, &self.assignment)
    }

    pub fn is_expert(&self, instance: usize, label: usize, annotator: usize) -> bool {
        self.assignment.per_label[label][instance] == self.annotators[annotator].expert_cluster[label]
    }

    pub fn manifest(&self) -> SimulatorManifest {
        SimulatorManifest {
            seed: self.seed,
            n_annotators: self.n_annotators(),
            flip_probability: NON_EXPERT_FLIP,
            labels: (0..self.n_labels)
                .map(|l| LabelClusters {
                    label_id: l + 1,
                    centers: self.assignment.centers[l].clone(),
                    expert_cluster_by_annotator: self
                        .annotators
                        .iter()
                        .map(|a| a.expert_cluster[l] + 1)
                        .collect(),
                    cluster_by_instance: self.assignment.per_label[l].iter().map(|c| c + 1).collect(),
                })
                .collect(),
        }
    }
}

impl AnnotationChannel for CrowdSimulator {
    fn request(&mut self, query: &QueryTriple) -> Result<Annotation> {
        Ok(Annotation {
            annotator: query.annotator,
            value: self.answer(query.instance, query.label, query.annotator),
        })
    }
}

/// Everything needed to reproduce a simulated crowd. Ids are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorManifest {
    pub seed: u64,
    pub n_annotators: usize,
    pub flip_probability: f64,
    pub labels: Vec<LabelClusters>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelClusters {
    pub label_id: usize,
    pub centers: Vec<f64>,
    pub expert_cluster_by_annotator: Vec<usize>,
    pub cluster_by_instance: Vec<usize>,
}

/// Every annotator labels every label of every initial instance once.
pub fn seed_initial_annotations(
    store: &mut AnnotationStore,
    initial_labeled: &[usize],
    channel: &mut dyn AnnotationChannel,
) -> Result<()> {
    for &i in initial_labeled {
        for l in 0..store.n_labels() {
            for j in 0..store.n_annotators() {
                let answer = channel.request(&QueryTriple::new(i, l, j))?;
                store.add(i, l, answer.annotator, answer.value)?;
            }
        }
    }
    Ok(())
}
