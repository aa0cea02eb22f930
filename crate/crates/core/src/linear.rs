//! Linear scores, the logistic sigmoid and an L2-regularised logistic trainer
//! with soft targets.
//!
//! The trainer maximises
//!
//! ```text
//! J(w) = sum_i [ t_i * w'x_i - ln(1 + exp(w'x_i)) ] - (lambda / 2) * |w|^2
//! ```
//!
//! by full-batch gradient ascent. Each iteration proposes a Barzilai-Borwein
//! step and backtracks until the Armijo condition holds, so `J` never
//! decreases. No bias is added here: callers append a constant feature.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Logistic sigmoid, evaluated on the branch that cannot overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ln(sigmoid(z))`.
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn linear_score(w: &[f64], x: &[f64]) -> Result<f64> {
    check_dim(w.len(), x.len())?;
    Ok(dot(w, x))
}

/// `p(z = +1 | x) = sigmoid(w'x)`.
pub fn predict_prob(w: &[f64], x: &[f64]) -> Result<f64> {
    linear_score(w, x).map(sigmoid)
}

pub fn squared_norm(w: &[f64]) -> f64 {
    dot(w, w)
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// A feature vector with a target probability for the positive class.
#[derive(Debug, Clone, Copy)]
pub struct SoftExample<'a> {
    pub features: &'a [f64],
    pub target: f64,
}

impl<'a> SoftExample<'a> {
    pub fn new(features: &'a [f64], target: f64) -> Self {
        SoftExample { features, target }
    }
}

/// A smooth concave objective over a weight vector.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, w: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the value.
    fn value_and_gradient(&self, w: &[f64], grad: &mut [f64]) -> f64;

    /// An upper bound on the gradient's Lipschitz constant, used for the
    /// very first trial step.
    fn lipschitz_hint(&self) -> f64;
}

/// The penalised soft-target log-likelihood `J` above.
#[derive(Debug, Clone, Copy)]
pub struct SoftLogistic<'e, 'a> {
    examples: &'e [SoftExample<'a>],
    dim: usize,
    lambda: f64,
}

impl<'e, 'a> SoftLogistic<'e, 'a> {
    /// Validates the examples. An empty example set is allowed here; its
    /// optimum is the zero vector.
    pub fn new(examples: &'e [SoftExample<'a>], dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        for ex in examples {
            check_dim(dim, ex.features.len())?;
            if ex.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite feature in training example"));
            }
            if !(0.0..=1.0).contains(&ex.target) {
                return Err(Error::invalid(format!(
                    "soft target {} outside [0, 1]",
                    ex.target
                )));
            }
        }
        Ok(SoftLogistic {
            examples,
            dim,
            lambda,
        })
    }
}

impl Objective for SoftLogistic<'_, '_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, w: &[f64]) -> f64 {
        let data: f64 = self
            .examples
            .iter()
            .map(|ex| {
                let s = dot(w, ex.features);
                ex.target * s - softplus(s)
            })
            .sum();
        data - 0.5 * self.lambda * squared_norm(w)
    }

    fn value_and_gradient(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        for (g, wk) in grad.iter_mut().zip(w) {
            *g = -self.lambda * wk;
        }
        let mut data = 0.0;
        for ex in self.examples {
            let s = dot(w, ex.features);
            data += ex.target * s - softplus(s);
            let r = ex.target - sigmoid(s);
            for (g, xk) in grad.iter_mut().zip(ex.features) {
                *g += r * xk;
            }
        }
        data - 0.5 * self.lambda * squared_norm(w)
    }

    fn lipschitz_hint(&self) -> f64 {
        let frob: f64 = self.examples.iter().map(|ex| squared_norm(ex.features)).sum();
        0.25 * frob + self.lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentOptions {
    pub max_iters: usize,
    /// Stop once the gradient infinity-norm drops to this value.
    pub tolerance: f64,
    pub max_backtracks: usize,
    /// Sufficient-increase constant of the Armijo test.
    pub armijo: f64,
    /// Keep the objective value of every iterate in the result.
    pub record_trace: bool,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            max_iters: 500,
            tolerance: 1e-6,
            max_backtracks: 60,
            armijo: 1e-4,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    pub weights: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Backtracking ran out before finding an increasing step; `weights`
    /// holds the best iterate reached.
    pub line_search_failed: bool,
    pub trace: Vec<f64>,
}

/// Maximises `obj` from `init`.
pub fn ascend<O: Objective + ?Sized>(obj: &O, init: &[f64], opts: &AscentOptions) -> Result<AscentResult> {
    check_dim(obj.dim(), init.len())?;
    let n = init.len();
    let mut w = init.to_vec();
    let mut grad = vec![0.0; n];
    let mut value = obj.value_and_gradient(&w, &mut grad);
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(value);
    }
    let mut step = 1.0 / obj.lipschitz_hint().max(f64::MIN_POSITIVE);
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut iterations = 0;
    let mut line_search_failed = false;

    while iterations < opts.max_iters {
        let gnorm = inf_norm(&grad);
        if gnorm <= opts.tolerance {
            break;
        }
        let g2 = squared_norm(&grad);
        let mut t = step;
        let mut accepted = false;
        for _ in 0..=opts.max_backtracks {
            for k in 0..n {
                trial[k] = w[k] + t * grad[k];
            }
            let v = obj.value(&trial);
            if v.is_finite() && v >= value + opts.armijo * t * g2 {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            line_search_failed = true;
            break;
        }
        let new_value = obj.value_and_gradient(&trial, &mut trial_grad);
        // Barzilai-Borwein proposal for the next step; y's < 0 for concave J.
        let (mut ss, mut sy) = (0.0, 0.0);
        for k in 0..n {
            let s = trial[k] - w[k];
            ss += s * s;
            sy += s * (trial_grad[k] - grad[k]);
        }
        step = if sy < 0.0 { (ss / -sy).clamp(1e-12, 1e12) } else { t * 2.0 };
        std::mem::swap(&mut w, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        value = new_value;
        iterations += 1;
        if opts.record_trace {
            trace.push(value);
        }
    }
    let grad_norm = inf_norm(&grad);
    Ok(AscentResult {
        weights: w,
        value,
        grad_norm,
        iterations,
        converged: grad_norm <= opts.tolerance,
        line_search_failed,
        trace,
    })
}

/// Trains an L2-regularised logistic model from the zero vector.
pub fn train_logistic(
    examples: &[SoftExample<'_>],
    lambda: f64,
    opts: &AscentOptions,
) -> Result<AscentResult> {
    let dim = examples
        .first()
        .map(|ex| ex.features.len())
        .ok_or(Error::Empty("training set"))?;
    train_logistic_from(&vec![0.0; dim], examples, lambda, opts)
}

/// Trains from a warm start. An empty example set yields the zero vector,
/// the optimum of the bare penalty.
pub fn train_logistic_from(
    init: &[f64],
    examples: &[SoftExample<'_>],
    lambda: f64,
    opts: &AscentOptions,
) -> Result<AscentResult> {
    let obj = SoftLogistic::new(examples, init.len(), lambda)?;
    ascend(&obj, init, opts)
}
