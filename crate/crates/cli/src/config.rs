//! Run configuration: a JSON file, overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use serde::Deserialize;

use crowdal::dataset::synthetic::{generate, SyntheticConfig};
use crowdal::dataset::load_dataset;
use crowdal::{Dataset, DatasetFormat, ExecMode, Method, RunSettings};

/// Keys accepted in a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub lambda: Option<f64>,
    pub k: Option<usize>,
    pub xi: Option<f64>,
    pub budget: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub seeds: Option<Seeds>,
    pub dataset: Option<PathBuf>,
    pub format: Option<DatasetFormat>,
    pub out_dir: Option<PathBuf>,
}

/// Either a seed count (`3` means seeds 0, 1, 2) or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

impl std::str::FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.contains(',') {
            s.split(',')
                .map(|t| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}")))
                .collect::<Result<Vec<_>, _>>()
                .map(Seeds::List)
        } else {
            s.trim().parse::<u64>().map(Seeds::Count).map_err(|e| format!("bad seed count {s:?}: {e}"))
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

/// Dataset and hyperparameter flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Dataset format: mld or csv.
    #[arg(long)]
    pub format: Option<DatasetFormat>,
    /// Use the built-in 400-instance synthetic dataset instead of a file.
    #[arg(long, conflicts_with = "dataset")]
    pub synthetic: bool,
    /// Seed of the synthetic dataset generator.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Neighbours in the label code.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Number of annotators.
    #[arg(long)]
    pub annotators: Option<usize>,
    /// Run everything on the calling thread.
    #[arg(long)]
    pub sequential: bool,
}

/// Everything a subcommand needs after merging file and flags.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub dataset: Dataset,
    pub source: String,
    pub settings: RunSettings,
    pub file: FileConfig,
}

impl RunArgs {
    pub fn resolve(&self) -> anyhow::Result<Resolved> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let dataset_path = self.dataset.clone().or_else(|| file.dataset.clone());
        let (dataset, source, mut settings) = match dataset_path {
            Some(path) if !self.synthetic => {
                let format = self
                    .format
                    .or(file.format)
                    .context("--format mld|csv is required with a dataset file")?;
                let ds =
                    load_dataset(&path, format).with_context(|| format!("cannot load dataset {}", path.display()))?;
                (ds, path.display().to_string(), RunSettings::paper())
            }
            _ => {
                if !self.synthetic {
                    bail!("no dataset given: pass --dataset PATH --format mld|csv, or --synthetic");
                }
                let ds = generate(&SyntheticConfig {
                    seed: self.data_seed,
                    ..Default::default()
                })?;
                (ds, format!("synthetic(seed={})", self.data_seed), RunSettings::synthetic_benchmark())
            }
        };
        if let Some(v) = self.lambda.or(file.lambda) {
            settings.lambda = v;
        }
        if let Some(v) = self.k.or(file.k) {
            settings.k = v;
        }
        if let Some(v) = self.xi.or(file.xi) {
            settings.xi = v;
        }
        if let Some(v) = self.budget.or(file.budget) {
            settings.budget = v;
        }
        if let Some(v) = self.checkpoint_every.or(file.checkpoint_every) {
            settings.checkpoint_every = v;
        }
        if let Some(v) = self.annotators {
            settings.n_annotators = v;
        }
        if self.sequential {
            settings.mode = ExecMode::Sequential;
        }
        settings.validate()?;
        Ok(Resolved {
            dataset,
            source,
            settings,
            file,
        })
    }
}

pub fn parse_methods(names: &[String]) -> anyhow::Result<Vec<Method>> {
    let mut out = Vec::new();
    for name in names.iter().flat_map(|n| n.split(',')).map(str::trim).filter(|n| !n.is_empty()) {
        let m: Method = name.parse().map_err(anyhow::Error::msg)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        bail!("no methods selected");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_parse_as_count_or_list() {
        assert_eq!("3".parse::<Seeds>().unwrap().to_vec(), vec![0, 1, 2]);
        assert_eq!("4, 9".parse::<Seeds>().unwrap().to_vec(), vec![4, 9]);
        assert!("x".parse::<Seeds>().is_err());
        let from_json: Seeds = serde_json::from_str("[1,2]").unwrap();
        assert_eq!(from_json, Seeds::List(vec![1, 2]));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"lambda": 1.0, "lamda": 2}"#).is_err());
        let cfg: FileConfig = serde_json::from_str(r#"{"k": 5, "seeds": 2, "format": "csv"}"#).unwrap();
        assert_eq!(cfg.k, Some(5));
        assert_eq!(cfg.format, Some(DatasetFormat::Csv));
    }

    #[test]
    fn flags_override_the_file_and_profiles_differ() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"lambda": 0.5, "budget": 40}"#).unwrap();
        let args = RunArgs {
            config: Some(path),
            synthetic: true,
            budget: Some(20),
            ..Default::default()
        };
        let r = args.resolve().unwrap();
        assert_eq!(r.settings.lambda, 0.5);
        assert_eq!(r.settings.budget, 20);
        assert_eq!(r.settings.k, RunSettings::synthetic_benchmark().k);
        assert_eq!(r.dataset.len(), 400);
    }

    #[test]
    fn a_dataset_needs_a_format() {
        let args = RunArgs {
            dataset: Some("/nonexistent.mld".into()),
            ..Default::default()
        };
        assert!(args.resolve().is_err());
        assert!(RunArgs::default().resolve().is_err());
    }

    #[test]
    fn methods_are_deduplicated() {
        let m = parse_methods(&["mac,smv_rd".into(), "MAC".into()]).unwrap();
        assert_eq!(m, vec![Method::Mac, Method::SmvRd]);
        assert!(parse_methods(&["nope".into()]).is_err());
    }
}
