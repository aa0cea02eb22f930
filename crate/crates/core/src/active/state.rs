use std::collections::BTreeSet;

use rand::Rng;

use super::QueryTriple;
use crate::dataset::AnnotationStore;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Which (instance, label, annotator) triples may still be queried.
///
/// A label drops out of an instance once every annotator has answered it; an
/// instance drops out of the pool once all its labels have. Eligible triples
/// are also kept in a dense list so uniform draws are O(1).
#[derive(Debug, Clone, PartialEq)]
pub struct Eligibility {
    n_labels: usize,
    n_annotators: usize,
    // flat (instance, label, annotator) -> position in `triples`, or NONE
    position: Vec<usize>,
    triples: Vec<QueryTriple>,
    remaining_per_pair: Vec<usize>,
    remaining_labels: Vec<usize>,
    pool: BTreeSet<usize>,
}

impl Eligibility {
    /// Every triple over `candidates` that the store has not answered yet.
    pub fn new(store: &AnnotationStore, candidates: &[usize]) -> Self {
        let (n, n_labels, n_annotators) = (store.n_instances(), store.n_labels(), store.n_annotators());
        let mut el = Eligibility {
            n_labels,
            n_annotators,
            position: vec![NONE; n * n_labels * n_annotators],
            triples: Vec::new(),
            remaining_per_pair: vec![0; n * n_labels],
            remaining_labels: vec![0; n],
            pool: BTreeSet::new(),
        };
        let mut sorted = candidates.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for i in sorted {
            for l in 0..n_labels {
                for j in 0..n_annotators {
                    if !store.contains(i, l, j) {
                        let q = QueryTriple::new(i, l, j);
                        let f = el.flat(&q);
                        el.position[f] = el.triples.len();
                        el.triples.push(q);
                        el.remaining_per_pair[i * n_labels + l] += 1;
                    }
                }
                if el.remaining_per_pair[i * n_labels + l] > 0 {
                    el.remaining_labels[i] += 1;
                }
            }
            if el.remaining_labels[i] > 0 {
                el.pool.insert(i);
            }
        }
        el
    }

    fn flat(&self, q: &QueryTriple) -> usize {
        (q.instance * self.n_labels + q.label) * self.n_annotators + q.annotator
    }

    fn in_range(&self, q: &QueryTriple) -> bool {
        q.instance < self.remaining_labels.len() && q.label < self.n_labels && q.annotator < self.n_annotators
    }

    pub fn is_eligible(&self, q: &QueryTriple) -> bool {
        self.in_range(q) && self.position[self.flat(q)] != NONE
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Instances with at least one eligible triple, ascending.
    pub fn pool(&self) -> impl Iterator<Item = usize> + '_ {
        self.pool.iter().copied()
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    pub fn in_pool(&self, instance: usize) -> bool {
        self.pool.contains(&instance)
    }

    pub fn available_labels(&self, instance: usize) -> Vec<usize> {
        (0..self.n_labels)
            .filter(|&l| self.remaining_per_pair[instance * self.n_labels + l] > 0)
            .collect()
    }

    pub fn available_annotators(&self, instance: usize, label: usize) -> Vec<usize> {
        (0..self.n_annotators)
            .filter(|&j| self.is_eligible(&QueryTriple::new(instance, label, j)))
            .collect()
    }

    /// Marks a triple as queried, cascading label and instance removal.
    pub fn remove(&mut self, q: &QueryTriple) -> Result<()> {
        if !self.is_eligible(q) {
            return Err(Error::invalid(format!(
                "triple ({}, {}, {}) is not eligible",
                q.instance, q.label, q.annotator
            )));
        }
        let f = self.flat(q);
        let pos = self.position[f];
        self.position[f] = NONE;
        let last = self.triples.len() - 1;
        self.triples.swap(pos, last);
        self.triples.pop();
        if pos < self.triples.len() {
            let moved = self.triples[pos];
            let mf = self.flat(&moved);
            self.position[mf] = pos;
        }
        let pair = q.instance * self.n_labels + q.label;
        self.remaining_per_pair[pair] -= 1;
        if self.remaining_per_pair[pair] == 0 {
            self.remaining_labels[q.instance] -= 1;
            if self.remaining_labels[q.instance] == 0 {
                self.pool.remove(&q.instance);
            }
        }
        Ok(())
    }

    /// Uniform draw over the eligible triples.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<QueryTriple> {
        if self.triples.is_empty() {
            return None;
        }
        Some(self.triples[rng.gen_range(0..self.triples.len())])
    }
}
