//! Instances, ground-truth labels, crowd annotations and the on-disk formats.
//!
//! Two dataset formats are supported:
//!
//! * **MLD** (text): first line `N d L`, then `N` rows of `d` space-separated
//!   floats, a `|` separator and `L` labels from `{+1,-1}`.
//! * **CSV**: a header row; an optional leading `id` column holds instance
//!   names, columns named `y:<name>` hold labels, every other column is a
//!   feature.
//!
//! Labels are bipolar everywhere. The tokens `0` and `1` are rejected so a
//! 0/1-encoded file fails loudly instead of flipping polarity.

mod annotations;
pub mod synthetic;

pub use annotations::{AnnotationRecord, AnnotationStore};

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A label value in `{+1, -1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Bipolar {
    Neg,
    Pos,
}

impl Bipolar {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Bipolar::Pos
        } else {
            Bipolar::Neg
        }
    }

    pub fn is_pos(self) -> bool {
        self == Bipolar::Pos
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Bipolar::Pos => 1.0,
            Bipolar::Neg => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Bipolar::Pos => 1,
            Bipolar::Neg => -1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Bipolar::Pos => Bipolar::Neg,
            Bipolar::Neg => Bipolar::Pos,
        }
    }
}

impl From<Bipolar> for i8 {
    fn from(b: Bipolar) -> i8 {
        b.as_i8()
    }
}

impl TryFrom<i8> for Bipolar {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            1 => Ok(Bipolar::Pos),
            -1 => Ok(Bipolar::Neg),
            other => Err(format!("label value {other} is not in {{+1,-1}}")),
        }
    }
}

impl fmt::Display for Bipolar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bipolar::Pos => "+1",
            Bipolar::Neg => "-1",
        })
    }
}

impl FromStr for Bipolar {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "+1" => Ok(Bipolar::Pos),
            "-1" => Ok(Bipolar::Neg),
            other => Err(format!("label token {other:?} is not one of +1, -1")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Mld,
    Csv,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mld" => Ok(DatasetFormat::Mld),
            "csv" => Ok(DatasetFormat::Csv),
            other => Err(format!("unknown dataset format {other:?} (expected mld or csv)")),
        }
    }
}

/// Feature matrix plus ground-truth bipolar label matrix, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    n_labels: usize,
    features: Vec<f64>,
    truths: Vec<Bipolar>,
    names: Option<Vec<String>>,
    label_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        dim: usize,
        n_labels: usize,
        features: Vec<f64>,
        truths: Vec<Bipolar>,
    ) -> Result<Self> {
        if dim == 0 || n_labels == 0 {
            return Err(Error::invalid("d and L must be positive"));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::invalid("feature buffer is not a multiple of d"));
        }
        let n = features.len() / dim;
        if n == 0 {
            return Err(Error::Empty("dataset"));
        }
        if truths.len() != n * n_labels {
            return Err(Error::Dimension {
                expected: n * n_labels,
                actual: truths.len(),
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at instance {}, component {}",
                pos / dim,
                pos % dim
            )));
        }
        let label_names = (1..=n_labels).map(|l| format!("label{l}")).collect();
        Ok(Dataset {
            dim,
            n_labels,
            features,
            truths,
            names: None,
            label_names,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        check_len("instance names", self.len(), names.len())?;
        self.names = Some(names);
        Ok(self)
    }

    pub fn with_label_names(mut self, names: Vec<String>) -> Result<Self> {
        check_len("label names", self.n_labels, names.len())?;
        self.label_names = names;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn truths(&self, i: usize) -> &[Bipolar] {
        &self.truths[i * self.n_labels..(i + 1) * self.n_labels]
    }

    pub fn truth(&self, i: usize, label: usize) -> Bipolar {
        self.truths[i * self.n_labels + label]
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    /// Mean number of positive labels over the given instances.
    pub fn label_cardinality(&self, indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        let positives: usize = indices
            .iter()
            .map(|&i| self.truths(i).iter().filter(|z| z.is_pos()).count())
            .sum();
        positives as f64 / indices.len() as f64
    }

    /// SHA-256 of the canonical MLD serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_mld_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_mld_string(&self) -> String {
        let mut out = format!("{} {} {}\n", self.len(), self.dim, self.n_labels);
        for i in 0..self.len() {
            let feats: Vec<String> = self.features(i).iter().map(|v| v.to_string()).collect();
            let labels: Vec<String> = self.truths(i).iter().map(|z| z.to_string()).collect();
            out.push_str(&feats.join(" "));
            out.push_str(" | ");
            out.push_str(&labels.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn to_csv_string(&self) -> String {
        let mut header: Vec<String> = Vec::new();
        if self.names.is_some() {
            header.push("id".into());
        }
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        header.extend(self.label_names.iter().map(|n| format!("y:{n}")));
        let mut out = header.join(",");
        out.push('\n');
        for i in 0..self.len() {
            let mut row: Vec<String> = Vec::new();
            if let Some(names) = &self.names {
                row.push(names[i].clone());
            }
            row.extend(self.features(i).iter().map(|v| v.to_string()));
            row.extend(self.truths(i).iter().map(|z| z.to_string()));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse_mld(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
        let hnum = hline + 1;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::parse(hnum, "header must be `N d L`"));
        }
        let parse_count = |s: &str, what: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(Error::parse(hnum, format!("{what} must be a positive integer, got {s:?}"))),
            }
        };
        let n = parse_count(parts[0], "N")?;
        let dim = parse_count(parts[1], "d")?;
        let n_labels = parse_count(parts[2], "L")?;

        let mut features = Vec::with_capacity(n * dim);
        let mut truths = Vec::with_capacity(n * n_labels);
        let mut rows = 0;
        for (idx, line) in lines {
            let lnum = idx + 1;
            if rows == n {
                return Err(Error::parse(lnum, format!("more than N={n} data rows")));
            }
            let (left, right) = line
                .split_once('|')
                .ok_or_else(|| Error::parse(lnum, "missing `|` separator"))?;
            let feats: Vec<&str> = left.split_whitespace().collect();
            if feats.len() != dim {
                return Err(Error::parse(
                    lnum,
                    format!("expected {dim} features, found {}", feats.len()),
                ));
            }
            for tok in feats {
                features.push(parse_feature(tok, lnum)?);
            }
            let labels: Vec<&str> = right.split_whitespace().collect();
            if labels.len() != n_labels {
                return Err(Error::parse(
                    lnum,
                    format!("expected {n_labels} labels, found {}", labels.len()),
                ));
            }
            for tok in labels {
                truths.push(tok.parse::<Bipolar>().map_err(|e| Error::parse(lnum, e))?);
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::parse(
                hnum,
                format!("header declares N={n} rows but {rows} were found"),
            ));
        }
        Dataset::new(dim, n_labels, features, truths)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(1, e.to_string()))?
            .clone();
        let has_id = headers.get(0) == Some("id");
        let mut feature_cols = Vec::new();
        let mut label_cols = Vec::new();
        let mut label_names = Vec::new();
        for (c, h) in headers.iter().enumerate() {
            if c == 0 && has_id {
                continue;
            }
            match h.strip_prefix("y:") {
                Some(name) => {
                    label_cols.push(c);
                    label_names.push(name.to_string());
                }
                None => feature_cols.push(c),
            }
        }
        if feature_cols.is_empty() || label_cols.is_empty() {
            return Err(Error::parse(
                1,
                "header needs at least one feature column and one `y:` label column",
            ));
        }
        let mut features = Vec::new();
        let mut truths = Vec::new();
        let mut names = Vec::new();
        for (r, rec) in reader.records().enumerate() {
            let lnum = r + 2;
            let rec = rec.map_err(|e| Error::parse(lnum, e.to_string()))?;
            if rec.len() != headers.len() {
                return Err(Error::parse(
                    lnum,
                    format!("expected {} fields, found {}", headers.len(), rec.len()),
                ));
            }
            if has_id {
                names.push(rec[0].to_string());
            }
            for &c in &feature_cols {
                features.push(parse_feature(&rec[c], lnum)?);
            }
            for &c in &label_cols {
                truths.push(rec[c].parse::<Bipolar>().map_err(|e| Error::parse(lnum, e))?);
            }
        }
        if features.is_empty() {
            return Err(Error::parse(2, "no data rows"));
        }
        let ds = Dataset::new(feature_cols.len(), label_cols.len(), features, truths)?
            .with_label_names(label_names)?;
        if has_id {
            ds.with_names(names)
        } else {
            Ok(ds)
        }
    }
}

fn parse_feature(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("bad feature value {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite feature value {tok:?}")));
    }
    Ok(v)
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::invalid(format!(
            "{what}: expected {expected} entries, got {actual}"
        )));
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    match format {
        DatasetFormat::Mld => Dataset::parse_mld(&text),
        DatasetFormat::Csv => Dataset::parse_csv(&text),
    }
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>, format: DatasetFormat) -> Result<()> {
    let text = match format {
        DatasetFormat::Mld => ds.to_mld_string(),
        DatasetFormat::Csv => ds.to_csv_string(),
    };
    fs::write(path, text)?;
    Ok(())
}

/// Fractions of the data for the initial labeled set, the unlabeled pool and
/// the test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub labeled: f64,
    pub unlabeled: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const fn new(labeled: f64, unlabeled: f64, test: f64) -> Self {
        SplitFractions {
            labeled,
            unlabeled,
            test,
        }
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions::new(0.025, 0.475, 0.5)
    }
}

/// Disjoint index sets covering `0..N`, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub initial_labeled: Vec<usize>,
    pub unlabeled_pool: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

// Guards floor() against products like 0.475 * 2000 = 949.999...
const SPLIT_EPS: f64 = 1e-9;

impl DataSplit {
    /// Shuffles `0..n` with a seeded stream and cuts it into three parts.
    /// Labeled and unlabeled sizes are `floor(f * n)`; the remainder is test.
    pub fn new(n: usize, fractions: SplitFractions, seed: u64) -> Result<Self> {
        let SplitFractions {
            labeled,
            unlabeled,
            test,
        } = fractions;
        if [labeled, unlabeled, test].iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::invalid("split fractions must be finite and non-negative"));
        }
        let total = labeled + unlabeled + test;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions must sum to 1, got {total}"
            )));
        }
        let n_l = (labeled * n as f64 + SPLIT_EPS).floor() as usize;
        let n_u = (unlabeled * n as f64 + SPLIT_EPS).floor() as usize;
        if n_l == 0 {
            return Err(Error::invalid(format!(
                "labeled fraction {labeled} of {n} instances selects no instance"
            )));
        }
        let n_u = n_u.min(n - n_l);

        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut initial_labeled = order[..n_l].to_vec();
        let mut unlabeled_pool = order[n_l..n_l + n_u].to_vec();
        let mut test = order[n_l + n_u..].to_vec();
        initial_labeled.sort_unstable();
        unlabeled_pool.sort_unstable();
        test.sort_unstable();
        Ok(DataSplit {
            initial_labeled,
            unlabeled_pool,
            test,
            seed,
        })
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (
            self.initial_labeled.len(),
            self.unlabeled_pool.len(),
            self.test.len(),
        )
    }
}

pub fn split_dataset(ds: &Dataset, fractions: SplitFractions, seed: u64) -> Result<DataSplit> {
    DataSplit::new(ds.len(), fractions, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> Dataset {
        Dataset::new(
            2,
            3,
            vec![0.5, -1.25, 3.0, 1e-7],
            vec![
                Bipolar::Pos,
                Bipolar::Neg,
                Bipolar::Neg,
                Bipolar::Neg,
                Bipolar::Pos,
                Bipolar::Pos,
            ],
        )
        .unwrap()
    }

    #[test]
    fn mld_round_trip() {
        let ds = toy();
        let text = ds.to_mld_string();
        let back = Dataset::parse_mld(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_mld_string(), text);
    }

    #[test]
    fn mld_arity_error_names_line() {
        let text = "2 2 3\n0.5 -1.25 | +1 -1 -1\n3 0.1 | -1 +1\n";
        match Dataset::parse_mld(text) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("expected 3 labels"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn mld_rejects_zero_one_labels() {
        let text = "1 1 2\n0.5 | 1 0\n";
        assert!(matches!(
            Dataset::parse_mld(text),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn mld_rejects_non_finite_and_bad_header() {
        assert!(matches!(
            Dataset::parse_mld("1 1 1\nNaN | +1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            Dataset::parse_mld("1 1\n0 | +1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Dataset::parse_mld("3 1 1\n0 | +1\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn csv_round_trip_keeps_names() {
        let ds = toy()
            .with_names(vec!["a".into(), "b".into()])
            .unwrap()
            .with_label_names(vec!["sea".into(), "sunset".into(), "trees".into()])
            .unwrap();
        let back = Dataset::parse_csv(&ds.to_csv_string()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.label_names()[1], "sunset");
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "x1,x2,y:a\n1,2,+1\n1,2,3\n";
        assert!(matches!(
            Dataset::parse_csv(text),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn split_sizes_on_image_scale() {
        let split = DataSplit::new(2000, SplitFractions::default(), 7).unwrap();
        assert_eq!(split.sizes(), (50, 950, 1000));
    }

    #[test]
    fn split_is_deterministic() {
        let a = DataSplit::new(321, SplitFractions::default(), 99).unwrap();
        let b = DataSplit::new(321, SplitFractions::default(), 99).unwrap();
        assert_eq!(a, b);
        let c = DataSplit::new(321, SplitFractions::default(), 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_degenerate_all_labeled() {
        let split = DataSplit::new(10, SplitFractions::new(1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(split.initial_labeled, (0..10).collect::<Vec<_>>());
        assert!(split.unlabeled_pool.is_empty() && split.test.is_empty());
    }

    #[test]
    fn split_rejects_bad_fractions() {
        assert!(DataSplit::new(100, SplitFractions::new(0.5, 0.5, 0.1), 1).is_err());
        assert!(DataSplit::new(10, SplitFractions::new(0.01, 0.49, 0.5), 1).is_err());
        assert!(DataSplit::new(10, SplitFractions::new(-0.1, 0.6, 0.5), 1).is_err());
    }

    #[test]
    fn cardinality() {
        let ds = toy();
        assert_eq!(ds.label_cardinality(&[0, 1]), 1.5);
        assert_eq!(ds.label_cardinality(&[]), 0.0);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 3usize..500, fl in 0.01f64..0.5, fu in 0.0f64..0.5, seed: u64) {
            let ft = 1.0 - fl - fu;
            prop_assume!(ft >= 0.0 && (fl * n as f64) >= 1.0);
            let split = DataSplit::new(n, SplitFractions::new(fl, fu, ft), seed).unwrap();
            let mut all: Vec<usize> = split
                .initial_labeled
                .iter()
                .chain(&split.unlabeled_pool)
                .chain(&split.test)
                .copied()
                .collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn mld_round_trip_is_identity(
            rows in prop::collection::vec(
                (prop::collection::vec(-1e6f64..1e6, 3), prop::collection::vec(any::<bool>(), 2)),
                1..20,
            )
        ) {
            let features: Vec<f64> = rows.iter().flat_map(|(x, _)| x.clone()).collect();
            let truths: Vec<Bipolar> = rows
                .iter()
                .flat_map(|(_, z)| z.iter().map(|&b| Bipolar::from_bool(b)))
                .collect();
            let ds = Dataset::new(3, 2, features, truths).unwrap();
            let text = ds.to_mld_string();
            let back = Dataset::parse_mld(&text).unwrap();
            prop_assert_eq!(&back, &ds);
            prop_assert_eq!(back.to_mld_string(), text);
        }
    }
}
