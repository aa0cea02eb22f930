//! Text checkpoint for a [`CrowdModel`].
//!
//! ```text
//! crowdal-model 1
//! representation enhanced
//! labels 4 annotators 3 classifier_dim 15 annotator_dim 11
//! lambda 1.0000000000000000e-3
//! label 1
//! w0 <classifier_dim floats>
//! w1 <annotator_dim floats>
//! ...
//! ```
//!
//! The last component of every vector is the bias weight. Floats carry 17
//! significant digits, so a save/load cycle is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CrowdModel, LabelModel, Representation};
use crate::error::{Error, Result};

const MAGIC: &str = "crowdal-model";
const VERSION: u32 = 1;

fn fmt_floats(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        let _ = write!(out, " {v:.16e}");
    }
    out.push('\n');
}

struct Lines<'t> {
    inner: std::iter::Enumerate<std::str::Lines<'t>>,
}

impl<'t> Lines<'t> {
    fn new(text: &'t str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
        }
    }

    /// Next non-blank line, 1-based line number and whitespace-split words.
    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'t str>)> {
        self.inner
            .by_ref()
            .map(|(i, l)| (i + 1, l.trim()))
            .find(|(_, l)| !l.is_empty())
            .map(|(n, l)| (n, l.split_whitespace().collect()))
            .ok_or_else(|| Error::parse(0, format!("unexpected end of checkpoint, wanted {what}")))
    }

    fn vector(&mut self, tag: &str, len: usize) -> Result<Vec<f64>> {
        let (n, parts) = self.next(tag)?;
        if parts.first() != Some(&tag) {
            return Err(Error::parse(n, format!("expected `{tag}`")));
        }
        if parts.len() != len + 1 {
            return Err(Error::parse(n, format!("`{tag}` needs {len} values, found {}", parts.len() - 1)));
        }
        parts[1..]
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(n, format!("bad weight {v:?}")))
            })
            .collect()
    }
}

impl CrowdModel {
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        let _ = writeln!(out, "representation {}", self.representation.as_str());
        let _ = writeln!(
            out,
            "labels {} annotators {} classifier_dim {} annotator_dim {}",
            self.n_labels(),
            self.n_annotators(),
            self.classifier_dim,
            self.annotator_dim
        );
        let _ = writeln!(out, "lambda {:.16e}", self.lambda);
        for (l, lm) in self.per_label.iter().enumerate() {
            let _ = writeln!(out, "label {}", l + 1);
            fmt_floats(&mut out, "w0", &lm.w0);
            for (j, w) in lm.annotators.iter().enumerate() {
                fmt_floats(&mut out, &format!("w{}", j + 1), w);
            }
        }
        out
    }

    pub fn parse_checkpoint(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);

        let (n, head) = lines.next("header")?;
        if head.len() != 2 || head[0] != MAGIC {
            return Err(Error::parse(n, format!("not a {MAGIC} file")));
        }
        if head[1] != VERSION.to_string() {
            return Err(Error::parse(n, format!("unsupported checkpoint version {}", head[1])));
        }
        let (n, rep) = lines.next("representation")?;
        let representation = match rep.as_slice() {
            ["representation", "enhanced"] => Representation::Enhanced,
            ["representation", "plain"] => Representation::Plain,
            _ => return Err(Error::parse(n, "bad representation line")),
        };
        let (n, dims) = lines.next("dimensions")?;
        let dim = |key: &str, pos: usize| -> Result<usize> {
            if dims.get(pos) != Some(&key) {
                return Err(Error::parse(n, format!("expected `{key}`")));
            }
            dims.get(pos + 1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(n, format!("bad value for `{key}`")))
        };
        let n_labels = dim("labels", 0)?;
        let n_annotators = dim("annotators", 2)?;
        let classifier_dim = dim("classifier_dim", 4)?;
        let annotator_dim = dim("annotator_dim", 6)?;
        let (n, lam) = lines.next("lambda")?;
        let lambda: f64 = match lam.as_slice() {
            ["lambda", v] => v.parse().map_err(|_| Error::parse(n, "bad lambda"))?,
            _ => return Err(Error::parse(n, "expected `lambda <value>`")),
        };

        let mut per_label = Vec::with_capacity(n_labels);
        for l in 0..n_labels {
            let (n, tag) = lines.next("label")?;
            if tag != ["label", (l + 1).to_string().as_str()] {
                return Err(Error::parse(n, format!("expected `label {}`", l + 1)));
            }
            let w0 = lines.vector("w0", classifier_dim)?;
            let annotators = (0..n_annotators)
                .map(|j| lines.vector(&format!("w{}", j + 1), annotator_dim))
                .collect::<Result<Vec<_>>>()?;
            per_label.push(LabelModel { w0, annotators });
        }
        Ok(CrowdModel {
            per_label,
            lambda,
            representation,
            classifier_dim,
            annotator_dim,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_checkpoint(&fs::read_to_string(path)?)
    }
}
