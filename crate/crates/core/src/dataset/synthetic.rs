//! Seeded generators for multi-label data with correlated labels.
//!
//! [`SyntheticKind::Linear`] draws Gaussian features and thresholds a noisy
//! linear score per label. Label directions share a few latent factors, so
//! labels co-occur and neighbours in feature space share label vectors.
//!
//! [`SyntheticKind::Prototypes`] draws instances around a handful of
//! prototypes, each owning a label pattern: one primary label, occasionally
//! a correlated second one. Labels are unions of clusters, which a linear
//! classifier cannot separate.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Bipolar, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    #[default]
    Linear,
    Prototypes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub kind: SyntheticKind,
    pub n: usize,
    pub dim: usize,
    pub n_labels: usize,
    pub n_prototypes: usize,
    /// Standard deviation of prototype centres.
    pub separation: f64,
    /// Standard deviation of instances around their prototype.
    pub spread: f64,
    /// Probability that a prototype carries a second, correlated label.
    pub pair_rate: f64,
    /// Number of latent factors shared between label directions (linear).
    pub n_factors: usize,
    /// Fraction of instances positive on each label (linear).
    pub positive_rate: f64,
    /// Standard deviation of the score noise, relative to a unit score (linear).
    pub margin_noise: f64,
    /// Per-entry probability of flipping a generated label.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            kind: SyntheticKind::Linear,
            n: 400,
            dim: 10,
            n_labels: 4,
            n_prototypes: 8,
            separation: 1.5,
            spread: 1.0,
            pair_rate: 0.35,
            n_factors: 2,
            positive_rate: 0.3,
            margin_noise: 0.2,
            label_noise: 0.03,
            seed: 0,
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n == 0 || cfg.dim == 0 || cfg.n_labels == 0 {
        return Err(Error::invalid("synthetic sizes must be positive"));
    }
    for (name, p) in [
        ("pair_rate", cfg.pair_rate),
        ("label_noise", cfg.label_noise),
        ("positive_rate", cfg.positive_rate),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
        }
    }
    if !(cfg.margin_noise.is_finite() && cfg.margin_noise >= 0.0) {
        return Err(Error::invalid("margin_noise must be finite and non-negative"));
    }
    match cfg.kind {
        SyntheticKind::Linear => linear(cfg),
        SyntheticKind::Prototypes => prototypes(cfg),
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / norm).collect()
}

fn linear(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n_factors == 0 {
        return Err(Error::invalid("n_factors must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let factors: Vec<Vec<f64>> = (0..cfg.n_factors).map(|_| unit(gaussian_vec(&mut rng, cfg.dim, 1.0))).collect();
    let directions: Vec<Vec<f64>> = (0..cfg.n_labels)
        .map(|l| {
            let own = unit(gaussian_vec(&mut rng, cfg.dim, 1.0));
            let shared = &factors[l % cfg.n_factors];
            unit(shared.iter().zip(&own).map(|(s, o)| 0.8 * s + 0.6 * o).collect())
        })
        .collect();
    let features: Vec<f64> = (0..cfg.n * cfg.dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut scores = vec![0.0; cfg.n * cfg.n_labels];
    for i in 0..cfg.n {
        let x = &features[i * cfg.dim..(i + 1) * cfg.dim];
        for (l, a) in directions.iter().enumerate() {
            let s: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
            scores[i * cfg.n_labels + l] = s + cfg.margin_noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut truths = vec![Bipolar::Neg; cfg.n * cfg.n_labels];
    let n_pos = (cfg.positive_rate * cfg.n as f64).round() as usize;
    for l in 0..cfg.n_labels {
        let mut order: Vec<usize> = (0..cfg.n).collect();
        order.sort_by(|&a, &b| {
            scores[b * cfg.n_labels + l]
                .total_cmp(&scores[a * cfg.n_labels + l])
                .then(a.cmp(&b))
        });
        for &i in order.iter().take(n_pos) {
            truths[i * cfg.n_labels + l] = Bipolar::Pos;
        }
    }
    for z in &mut truths {
        if rng.gen::<f64>() < cfg.label_noise {
            *z = z.flip();
        }
    }
    Dataset::new(cfg.dim, cfg.n_labels, features, truths)
}

fn prototypes(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n_prototypes == 0 {
        return Err(Error::invalid("n_prototypes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centres: Vec<Vec<f64>> = (0..cfg.n_prototypes)
        .map(|_| {
            (0..cfg.dim)
                .map(|_| cfg.separation * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let patterns: Vec<Vec<Bipolar>> = (0..cfg.n_prototypes)
        .map(|p| {
            let primary = p % cfg.n_labels;
            let mut labels = vec![Bipolar::Neg; cfg.n_labels];
            labels[primary] = Bipolar::Pos;
            if cfg.n_labels > 1 && rng.gen::<f64>() < cfg.pair_rate {
                labels[(primary + 1 + p / cfg.n_labels) % cfg.n_labels] = Bipolar::Pos;
            }
            labels
        })
        .collect();

    let mut features = Vec::with_capacity(cfg.n * cfg.dim);
    let mut truths = Vec::with_capacity(cfg.n * cfg.n_labels);
    for _ in 0..cfg.n {
        let p = rng.gen_range(0..cfg.n_prototypes);
        for c in &centres[p] {
            features.push(c + cfg.spread * rng.sample::<f64, _>(StandardNormal));
        }
        for &z in &patterns[p] {
            truths.push(if rng.gen::<f64>() < cfg.label_noise {
                z.flip()
            } else {
                z
            });
        }
    }
    Dataset::new(cfg.dim, cfg.n_labels, features, truths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_labels_follow_positive_rate_and_correlate() {
        let cfg = SyntheticConfig {
            label_noise: 0.0,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        for l in 0..ds.n_labels() {
            let pos = (0..ds.len()).filter(|&i| ds.truth(i, l).is_pos()).count();
            assert_eq!(pos, 120);
        }
        // labels 0 and 2 share a factor: co-occurrence beats independence
        let both = (0..ds.len()).filter(|&i| ds.truth(i, 0).is_pos() && ds.truth(i, 2).is_pos()).count();
        assert!(both as f64 > 0.3 * 0.3 * 400.0 * 1.5, "co-occurrence {both}");
    }

    #[test]
    fn shape_and_determinism() {
        for kind in [SyntheticKind::Linear, SyntheticKind::Prototypes] {
            let cfg = SyntheticConfig {
                kind,
                ..Default::default()
            };
            check_shape(&cfg);
        }
    }

    fn check_shape(cfg: &SyntheticConfig) {
        let cfg = cfg.clone();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.len(), a.dim(), a.n_labels()), (400, 10, 4));
        let all: Vec<usize> = (0..a.len()).collect();
        let card = a.label_cardinality(&all);
        assert!(card > 0.9 && card < 2.0, "cardinality {card}");
        for l in 0..a.n_labels() {
            assert!((0..a.len()).any(|i| a.truth(i, l).is_pos()));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SyntheticConfig {
            label_noise: 1.5,
            ..Default::default()
        };
        assert!(generate(&cfg).is_err());
    }
}
