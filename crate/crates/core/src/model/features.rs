use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::enhance::ReferenceIndex;
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};

/// Which inputs the per-label classifier sees. Annotator models always use
/// the original features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// `[x, c, 1]`, with `c` the kNN label code.
    Enhanced,
    /// `[x, 1]`.
    Plain,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Enhanced => "enhanced",
            Representation::Plain => "plain",
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "enhanced" => Ok(Representation::Enhanced),
            "plain" => Ok(Representation::Plain),
            other => Err(format!("unknown representation {other:?} (expected enhanced or plain)")),
        }
    }
}

/// Model inputs for every dataset instance, with the bias component appended.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    representation: Representation,
    classifier_dim: usize,
    annotator_dim: usize,
    n_labels: usize,
    classifier: Vec<f64>,
    annotator: Vec<f64>,
    codes: Option<Vec<f64>>,
}

impl FeatureTable {
    /// Computes inputs for all instances. `reference` is required for the
    /// enhanced representation.
    pub fn build(
        ds: &Dataset,
        representation: Representation,
        reference: Option<&ReferenceIndex>,
        mode: ExecMode,
    ) -> Result<Self> {
        let d = ds.dim();
        let n_labels = ds.n_labels();
        let annotator_dim = d + 1;
        let mut annotator = Vec::with_capacity(ds.len() * annotator_dim);
        for i in 0..ds.len() {
            annotator.extend_from_slice(ds.features(i));
            annotator.push(1.0);
        }
        let (classifier, classifier_dim, codes) = match representation {
            Representation::Plain => (annotator.clone(), annotator_dim, None),
            Representation::Enhanced => {
                let index = reference.ok_or_else(|| {
                    Error::invalid("enhanced representation needs a reference index")
                })?;
                if index.n_labels() != n_labels {
                    return Err(Error::Dimension {
                        expected: n_labels,
                        actual: index.n_labels(),
                    });
                }
                let rows = par::map_indexed(mode, ds.len(), |i| index.code_vector(ds.features(i)));
                let mut codes = Vec::with_capacity(ds.len() * n_labels);
                for row in rows {
                    codes.extend(row?);
                }
                let cdim = d + n_labels + 1;
                let mut classifier = Vec::with_capacity(ds.len() * cdim);
                for i in 0..ds.len() {
                    classifier.extend_from_slice(ds.features(i));
                    classifier.extend_from_slice(&codes[i * n_labels..(i + 1) * n_labels]);
                    classifier.push(1.0);
                }
                (classifier, cdim, Some(codes))
            }
        };
        Ok(FeatureTable {
            representation,
            classifier_dim,
            annotator_dim,
            n_labels,
            classifier,
            annotator,
            codes,
        })
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn len(&self) -> usize {
        self.annotator.len() / self.annotator_dim
    }

    pub fn is_empty(&self) -> bool {
        self.annotator.is_empty()
    }

    pub fn classifier_dim(&self) -> usize {
        self.classifier_dim
    }

    pub fn annotator_dim(&self) -> usize {
        self.annotator_dim
    }

    pub fn classifier(&self, i: usize) -> &[f64] {
        &self.classifier[i * self.classifier_dim..(i + 1) * self.classifier_dim]
    }

    pub fn annotator(&self, i: usize) -> &[f64] {
        &self.annotator[i * self.annotator_dim..(i + 1) * self.annotator_dim]
    }

    /// kNN code of an instance, when the representation has one.
    pub fn code(&self, i: usize) -> Option<&[f64]> {
        self.codes
            .as_ref()
            .map(|c| &c[i * self.n_labels..(i + 1) * self.n_labels])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Bipolar::{Neg, Pos};

    #[test]
    fn layouts() {
        let ds = Dataset::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![Pos, Neg, Neg, Neg]).unwrap();
        let plain = FeatureTable::build(&ds, Representation::Plain, None, ExecMode::Sequential).unwrap();
        assert_eq!(plain.classifier(1), &[3.0, 4.0, 1.0]);
        assert_eq!(plain.annotator(0), &[1.0, 2.0, 1.0]);
        assert!(plain.code(0).is_none());

        let idx = ReferenceIndex::from_dataset(&ds, &[0], 1).unwrap();
        let enh = FeatureTable::build(&ds, Representation::Enhanced, Some(&idx), ExecMode::Sequential).unwrap();
        assert_eq!(enh.classifier(1), &[3.0, 4.0, 1.0, -1.0, 1.0]);
        assert_eq!(enh.annotator(1), &[3.0, 4.0, 1.0]);
        assert_eq!(enh.classifier_dim(), 5);
        assert_eq!(enh.code(0), Some(&[1.0, -1.0][..]));

        assert!(FeatureTable::build(&ds, Representation::Enhanced, None, ExecMode::Sequential).is_err());
    }
}
