use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Bipolar;
use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "query_index,instance_id,label_id,annotator_id,value";

/// One crowd judgment. Ids are 0-based in memory; the CSV log is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub query_index: u64,
    pub instance: usize,
    pub label: usize,
    pub annotator: usize,
    pub value: Bipolar,
}

impl AnnotationRecord {
    /// One row of the CSV log, newline included.
    pub fn log_line(&self) -> String {
        format!(
            "{},{},{},{},{}\n",
            self.query_index,
            self.instance + 1,
            self.label + 1,
            self.annotator + 1,
            self.value
        )
    }
}

/// Sparse store of crowd annotations.
///
/// A missing record means "not annotated"; nothing ever stores a zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationStore {
    n_instances: usize,
    n_labels: usize,
    n_annotators: usize,
    records: Vec<AnnotationRecord>,
    // (instance, label) -> [(annotator, value)] in insertion order.
    cells: Vec<Vec<(usize, Bipolar)>>,
    anno: Vec<usize>,
    annotated_by_label: Vec<BTreeSet<usize>>,
}

impl AnnotationStore {
    pub fn new(n_instances: usize, n_labels: usize, n_annotators: usize) -> Self {
        AnnotationStore {
            n_instances,
            n_labels,
            n_annotators,
            records: Vec::new(),
            cells: vec![Vec::new(); n_instances * n_labels],
            anno: vec![0; n_instances],
            annotated_by_label: vec![BTreeSet::new(); n_labels],
        }
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_annotators(&self) -> usize {
        self.n_annotators
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    /// Appends a judgment, assigning the next query index.
    pub fn add(
        &mut self,
        instance: usize,
        label: usize,
        annotator: usize,
        value: Bipolar,
    ) -> Result<AnnotationRecord> {
        let query_index = self.records.last().map_or(0, |r| r.query_index + 1);
        let rec = AnnotationRecord {
            query_index,
            instance,
            label,
            annotator,
            value,
        };
        self.add_annotation(rec)?;
        Ok(rec)
    }

    /// Inserts a record carrying its own query index.
    ///
    /// Duplicate (instance, label, annotator) triples are rejected: they can
    /// only come from broken eligibility bookkeeping upstream.
    pub fn add_annotation(&mut self, rec: AnnotationRecord) -> Result<()> {
        if rec.instance >= self.n_instances
            || rec.label >= self.n_labels
            || rec.annotator >= self.n_annotators
        {
            return Err(Error::invalid(format!(
                "annotation ({}, {}, {}) out of range for store of shape ({}, {}, {})",
                rec.instance,
                rec.label,
                rec.annotator,
                self.n_instances,
                self.n_labels,
                self.n_annotators
            )));
        }
        if let Some(last) = self.records.last() {
            if rec.query_index <= last.query_index {
                return Err(Error::invalid(format!(
                    "query index {} does not follow {}",
                    rec.query_index, last.query_index
                )));
            }
        }
        let cell = &mut self.cells[rec.instance * self.n_labels + rec.label];
        if cell.iter().any(|&(j, _)| j == rec.annotator) {
            return Err(Error::DuplicateAnnotation {
                instance: rec.instance,
                label: rec.label,
                annotator: rec.annotator,
            });
        }
        cell.push((rec.annotator, rec.value));
        self.anno[rec.instance] += 1;
        self.annotated_by_label[rec.label].insert(rec.instance);
        self.records.push(rec);
        Ok(())
    }

    /// Annotations for one (instance, label) pair: the annotator set with values.
    pub fn cell(&self, instance: usize, label: usize) -> &[(usize, Bipolar)] {
        &self.cells[instance * self.n_labels + label]
    }

    pub fn contains(&self, instance: usize, label: usize, annotator: usize) -> bool {
        self.cell(instance, label).iter().any(|&(j, _)| j == annotator)
    }

    /// Number of annotations collected for an instance over all labels.
    pub fn anno_count(&self, instance: usize) -> usize {
        self.anno[instance]
    }

    /// Instances with at least one annotation on `label`, ascending.
    pub fn annotated_instances(&self, label: usize) -> impl Iterator<Item = usize> + '_ {
        self.annotated_by_label[label].iter().copied()
    }

    pub fn n_annotated(&self, label: usize) -> usize {
        self.annotated_by_label[label].len()
    }

    pub fn to_log_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.records.len() + 1));
        out.push_str(LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.log_line());
        }
        out
    }

    /// Parses an annotation log (1-based ids) into records.
    pub fn parse_log_csv(text: &str) -> Result<Vec<AnnotationRecord>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == LOG_HEADER => {}
            _ => return Err(Error::parse(1, format!("expected header `{LOG_HEADER}`"))),
        }
        let mut out = Vec::new();
        for (idx, line) in lines {
            let lnum = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(Error::parse(lnum, format!("expected 5 fields, found {}", fields.len())));
            }
            let id = |s: &str, what: &str| -> Result<usize> {
                match s.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(Error::parse(lnum, format!("bad {what} {s:?} (ids are 1-based)"))),
                }
            };
            out.push(AnnotationRecord {
                query_index: fields[0]
                    .parse()
                    .map_err(|_| Error::parse(lnum, format!("bad query_index {:?}", fields[0])))?,
                instance: id(fields[1], "instance_id")?,
                label: id(fields[2], "label_id")?,
                annotator: id(fields[3], "annotator_id")?,
                value: fields[4].parse().map_err(|e| Error::parse(lnum, e))?,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn singleton() {
        let mut s = AnnotationStore::new(4, 2, 3);
        s.add(1, 0, 2, Bipolar::Pos).unwrap();
        assert_eq!(s.anno_count(1), 1);
        assert_eq!(s.cell(1, 0), &[(2, Bipolar::Pos)]);
    }

    #[test]
    fn duplicate_triple_rejected() {
        let mut s = AnnotationStore::new(4, 2, 3);
        s.add(1, 0, 2, Bipolar::Pos).unwrap();
        let err = s.add(1, 0, 2, Bipolar::Neg).unwrap_err();
        assert!(matches!(err, Error::DuplicateAnnotation { .. }));
        assert_eq!(s.len(), 1);
        assert_eq!(s.anno_count(1), 1);
    }

    #[test]
    fn counts_across_labels() {
        let mut s = AnnotationStore::new(2, 3, 1);
        for l in 0..3 {
            s.add(0, l, 0, Bipolar::Neg).unwrap();
        }
        assert_eq!(s.anno_count(0), 3);
        assert_eq!(s.anno_count(1), 0);
    }

    #[test]
    fn out_of_range_and_non_monotone_rejected() {
        let mut s = AnnotationStore::new(2, 2, 2);
        assert!(s.add(2, 0, 0, Bipolar::Pos).is_err());
        s.add_annotation(AnnotationRecord {
            query_index: 5,
            instance: 0,
            label: 0,
            annotator: 0,
            value: Bipolar::Pos,
        })
        .unwrap();
        let stale = AnnotationRecord {
            query_index: 5,
            instance: 1,
            label: 0,
            annotator: 0,
            value: Bipolar::Pos,
        };
        assert!(s.add_annotation(stale).is_err());
    }

    #[test]
    fn log_round_trip_is_one_based() {
        let mut s = AnnotationStore::new(3, 2, 2);
        s.add(0, 1, 1, Bipolar::Neg).unwrap();
        s.add(2, 0, 0, Bipolar::Pos).unwrap();
        let text = s.to_log_csv();
        assert!(text.contains("0,1,2,2,-1"));
        let recs = AnnotationStore::parse_log_csv(&text).unwrap();
        assert_eq!(recs, s.records());
        assert!(AnnotationStore::parse_log_csv("bad\n").is_err());
        assert!(AnnotationStore::parse_log_csv(&format!("{LOG_HEADER}\n0,0,1,1,+1\n")).is_err());
    }

    proptest! {
        #[test]
        fn annotator_sets_sum_to_anno_count(
            triples in prop::collection::vec((0usize..6, 0usize..3, 0usize..4, any::<bool>()), 0..80)
        ) {
            let mut s = AnnotationStore::new(6, 3, 4);
            for (i, l, j, v) in triples {
                let _ = s.add(i, l, j, Bipolar::from_bool(v));
            }
            for i in 0..6 {
                let total: usize = (0..3).map(|l| s.cell(i, l).len()).sum();
                prop_assert_eq!(total, s.anno_count(i));
            }
            let n: usize = (0..6).map(|i| s.anno_count(i)).sum();
            prop_assert_eq!(n, s.len());
        }
    }
}
