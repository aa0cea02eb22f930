//! Query selection and the active-learning loop.
//!
//! Active strategies pick an instance by label-cardinality inconsistency
//! damped by how often it was already queried, then its most uncertain
//! label, then the annotator with the highest estimated expertise on that
//! pair. Random strategies draw uniformly from the eligible triples.

mod session;
mod state;
mod strategy;

pub use session::{run_strategy, ActiveSession, RunOutput, RunSettings, SessionError};
pub use state::Eligibility;
pub use strategy::{Aggregation, Method, Selection, StrategyConfig};

use serde::{Deserialize, Serialize};

use crate::dataset::Bipolar;
use crate::error::{Error, Result};

/// An (instance, label, annotator) query. 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryTriple {
    pub instance: usize,
    pub label: usize,
    pub annotator: usize,
}

impl QueryTriple {
    pub const fn new(instance: usize, label: usize, annotator: usize) -> Self {
        QueryTriple {
            instance,
            label,
            annotator,
        }
    }
}

/// The answer to a query. `annotator` is whoever actually answered; a live
/// operator may hand the query to a different identity than the one asked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator: usize,
    pub value: Bipolar,
}

/// Where annotations come from: a simulator, a script, or a person.
pub trait AnnotationChannel {
    fn request(&mut self, query: &QueryTriple) -> Result<Annotation>;
}

impl<C: AnnotationChannel + ?Sized> AnnotationChannel for &mut C {
    fn request(&mut self, query: &QueryTriple) -> Result<Annotation> {
        (**self).request(query)
    }
}

/// Replays a fixed list of answers, checking each matches the query's
/// instance and label.
#[derive(Debug, Clone)]
pub struct ScriptedChannel {
    answers: Vec<(QueryTriple, Bipolar)>,
    next: usize,
}

impl ScriptedChannel {
    pub fn new(answers: Vec<(QueryTriple, Bipolar)>) -> Self {
        ScriptedChannel { answers, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.answers.len() - self.next
    }
}

impl AnnotationChannel for ScriptedChannel {
    fn request(&mut self, query: &QueryTriple) -> Result<Annotation> {
        let (recorded, value) = *self
            .answers
            .get(self.next)
            .ok_or_else(|| Error::Channel("script exhausted".into()))?;
        if (recorded.instance, recorded.label) != (query.instance, query.label) {
            return Err(Error::Channel(format!(
                "script diverged at step {}: asked ({}, {}), recorded ({}, {})",
                self.next, query.instance, query.label, recorded.instance, recorded.label
            )));
        }
        self.next += 1;
        Ok(Annotation {
            annotator: recorded.annotator,
            value,
        })
    }
}

/// Squared gap between the predicted positive count and the average label
/// cardinality of the labeled data.
pub fn lci(estimated: &[Bipolar], avg_cardinality: f64) -> f64 {
    let pos = estimated.iter().filter(|z| z.is_pos()).count() as f64;
    (pos - avg_cardinality).powi(2)
}

/// `|pos_count - avg_cardinality| / max(xi, anno_count)`.
pub fn ci_score(pos_count: usize, avg_cardinality: f64, anno_count: usize, xi: f64) -> f64 {
    (pos_count as f64 - avg_cardinality).abs() / xi.max(anno_count as f64)
}

/// Instance with the highest CI score; ties go to the lowest id.
///
/// `pos_counts[k]` and `anno_counts[k]` describe `pool[k]`.
pub fn select_instance(
    pool: &[usize],
    pos_counts: &[usize],
    anno_counts: &[usize],
    avg_cardinality: f64,
    xi: f64,
) -> Result<usize> {
    if pool.len() != pos_counts.len() || pool.len() != anno_counts.len() {
        return Err(Error::invalid("pool, positive counts and annotation counts differ in length"));
    }
    let mut best: Option<(f64, usize)> = None;
    for k in 0..pool.len() {
        let score = ci_score(pos_counts[k], avg_cardinality, anno_counts[k], xi);
        let better = match best {
            None => true,
            Some((s, id)) => score > s || (score == s && pool[k] < id),
        };
        if better {
            best = Some((score, pool[k]));
        }
    }
    best.map(|(_, id)| id).ok_or(Error::Empty("instance pool"))
}

/// Label whose posterior is closest to 0.5; ties go to the lowest label id.
/// `candidates` holds `(label, p(z = +1))`.
pub fn select_label(candidates: &[(usize, f64)]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &(l, p) in candidates {
        let u = (p - 0.5).abs();
        let better = match best {
            None => true,
            Some((b, id)) => u < b || (u == b && l < id),
        };
        if better {
            best = Some((u, l));
        }
    }
    best.map(|(_, l)| l).ok_or(Error::Empty("available label set"))
}

/// Annotator with the highest expertise; ties go to the lowest id.
/// `candidates` holds `(annotator, expertise)`.
pub fn select_annotator(candidates: &[(usize, f64)]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for &(j, e) in candidates {
        let better = match best {
            None => true,
            Some((b, id)) => e > b || (e == b && j < id),
        };
        if better {
            best = Some((e, j));
        }
    }
    best.map(|(_, j)| j).ok_or(Error::Empty("available annotator set"))
}

/// Sign of the vote sum; a tie is negative, no votes is `None`.
pub fn majority_vote(values: impl IntoIterator<Item = Bipolar>) -> Option<Bipolar> {
    let mut seen = false;
    let mut sum = 0i64;
    for v in values {
        seen = true;
        sum += i64::from(v.as_i8());
    }
    seen.then(|| Bipolar::from_bool(sum > 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Bipolar::{Neg, Pos};
    use crate::linear::sigmoid;
    use proptest::prelude::*;

    #[test]
    fn lci_values() {
        assert_eq!(lci(&[Pos, Neg, Neg], 1.0), 0.0);
        assert!((lci(&[Pos, Pos, Pos, Neg, Neg], 1.24) - 3.0976).abs() < 1e-12);
        assert_eq!(lci(&[Neg; 4], 2.0), lci(&[Pos; 4], 2.0));
    }

    #[test]
    fn ci_values() {
        assert!((ci_score(3, 1.24, 0, 0.5) - 3.52).abs() < 1e-12);
        assert!((ci_score(3, 1.24, 2, 0.5) - 0.88).abs() < 1e-12);
        assert_eq!(ci_score(2, 2.0, 0, 0.5), 0.0);
        assert_eq!(ci_score(2, 2.0, 7, 0.5), 0.0);
    }

    #[test]
    fn instance_selection() {
        assert_eq!(select_instance(&[7], &[0], &[0], 1.0, 0.5).unwrap(), 7);
        assert_eq!(select_instance(&[4, 9], &[3, 3], &[0, 2], 1.24, 0.5).unwrap(), 4);
        assert_eq!(select_instance(&[9, 4], &[3, 3], &[2, 0], 1.24, 0.5).unwrap(), 4);
        assert_eq!(select_instance(&[5, 2, 8], &[1, 1, 1], &[0, 0, 0], 1.0, 0.5).unwrap(), 2);
        assert!(select_instance(&[], &[], &[], 1.0, 0.5).is_err());
    }

    #[test]
    fn label_selection() {
        assert_eq!(select_label(&[(0, 0.9), (1, 0.5), (2, 0.2)]).unwrap(), 1);
        assert_eq!(select_label(&[(3, 0.99)]).unwrap(), 3);
        assert_eq!(select_label(&[(2, 0.6), (1, 0.4)]).unwrap(), 1);
        assert!(select_label(&[]).is_err());
    }

    #[test]
    fn annotator_selection() {
        assert_eq!(select_annotator(&[(0, 0.5), (1, 0.5), (2, 0.5)]).unwrap(), 0);
        let scores = [2.0, -1.0, 0.0];
        let cands: Vec<(usize, f64)> = scores.iter().enumerate().map(|(j, s)| (j, sigmoid(*s))).collect();
        assert_eq!(select_annotator(&cands).unwrap(), 0);
        assert_eq!(select_annotator(&[(2, 0.1)]).unwrap(), 2);
        assert!(select_annotator(&[]).is_err());
    }

    #[test]
    fn votes() {
        assert_eq!(majority_vote([Pos, Pos, Neg]), Some(Pos));
        assert_eq!(majority_vote([Pos, Neg]), Some(Neg));
        assert_eq!(majority_vote([]), None);
    }

    #[test]
    fn scripted_channel_checks_order() {
        let mut ch = ScriptedChannel::new(vec![(QueryTriple::new(1, 0, 2), Pos)]);
        assert!(ch.request(&QueryTriple::new(0, 0, 2)).is_err());
        let a = ch.request(&QueryTriple::new(1, 0, 0)).unwrap();
        assert_eq!(a, Annotation { annotator: 2, value: Pos });
        assert!(ch.request(&QueryTriple::new(1, 0, 0)).is_err());
    }

    proptest! {
        #[test]
        fn argmax_survives_monotone_transforms(
            entries in prop::collection::vec((0usize..6, 0usize..5), 1..30),
            avg in 0.0f64..4.0,
        ) {
            let pool: Vec<usize> = (0..entries.len()).collect();
            let pos: Vec<usize> = entries.iter().map(|e| e.0).collect();
            let anno: Vec<usize> = entries.iter().map(|e| e.1).collect();
            let chosen = select_instance(&pool, &pos, &anno, avg, 0.5).unwrap();
            // the same argmax under exp(3 * score) + 1, tie rule included
            let transformed: Vec<f64> = (0..pool.len())
                .map(|k| (3.0 * ci_score(pos[k], avg, anno[k], 0.5)).exp() + 1.0)
                .collect();
            let best = transformed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let expect = pool.iter().zip(&transformed).find(|(_, &t)| t == best).map(|(i, _)| *i).unwrap();
            prop_assert_eq!(chosen, expect);
        }
    }
}
