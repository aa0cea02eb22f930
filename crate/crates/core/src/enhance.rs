//! kNN label-code features.
//!
//! Each instance gets a code vector: the mean bipolar label vector of its `k`
//! nearest neighbours among the initial labeled set. The classifier sees the
//! enhanced representation `[x, c]`. The reference set is frozen at build
//! time and codes are never refreshed from crowd estimates.

use crate::dataset::{Bipolar, Dataset};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceIndex {
    dim: usize,
    n_labels: usize,
    k: usize,
    features: Vec<f64>,
    labels: Vec<Bipolar>,
}

impl ReferenceIndex {
    /// Builds the index from parallel slices of feature rows and label rows.
    pub fn new(features: &[&[f64]], labels: &[&[Bipolar]], k: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Dimension {
                expected: features.len(),
                actual: labels.len(),
            });
        }
        if features.is_empty() {
            return Err(Error::Empty("reference set"));
        }
        if k == 0 || k > features.len() {
            return Err(Error::invalid(format!(
                "k = {k} must lie in 1..={} (reference size)",
                features.len()
            )));
        }
        let dim = features[0].len();
        let n_labels = labels[0].len();
        let mut flat_x = Vec::with_capacity(dim * features.len());
        let mut flat_z = Vec::with_capacity(n_labels * labels.len());
        for (x, z) in features.iter().zip(labels) {
            check_dim(dim, x.len())?;
            check_dim(n_labels, z.len())?;
            flat_x.extend_from_slice(x);
            flat_z.extend_from_slice(z);
        }
        Ok(ReferenceIndex {
            dim,
            n_labels,
            k,
            features: flat_x,
            labels: flat_z,
        })
    }

    /// Reference set made of the given dataset rows and their ground truth.
    pub fn from_dataset(ds: &Dataset, indices: &[usize], k: usize) -> Result<Self> {
        let xs: Vec<&[f64]> = indices.iter().map(|&i| ds.features(i)).collect();
        let zs: Vec<&[Bipolar]> = indices.iter().map(|&i| ds.truths(i)).collect();
        Self::new(&xs, &zs, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    /// Positions of the `k` nearest reference points by Euclidean distance;
    /// equal distances go to the lower position.
    pub fn neighbors(&self, x: &[f64]) -> Result<Vec<usize>> {
        check_dim(self.dim, x.len())?;
        let mut dists: Vec<(f64, usize)> = self
            .features
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(r, row)| {
                let d2: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, r)
            })
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(dists[..self.k].iter().map(|&(_, r)| r).collect())
    }

    pub fn code_vector(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut code = vec![0.0; self.n_labels];
        for r in self.neighbors(x)? {
            let z = &self.labels[r * self.n_labels..(r + 1) * self.n_labels];
            for (c, v) in code.iter_mut().zip(z) {
                *c += v.as_f64();
            }
        }
        let k = self.k as f64;
        code.iter_mut().for_each(|c| *c /= k);
        Ok(code)
    }
}

/// Concatenates features and code: `[x, c]`.
pub fn enhance(x: &[f64], code: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + code.len());
    out.extend_from_slice(x);
    out.extend_from_slice(code);
    out
}
