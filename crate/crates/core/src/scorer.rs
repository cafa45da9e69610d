//! Per-class score functions, the multiclass margin and the argmax rule.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::extended_kernel::KernelSpec;

/// Hidden-layer nonlinearity. Both variants are 1-Lipschitz with `σ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a = σ(z)`.
    pub(crate) fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Which parametric family a learner searches over.
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerFamily {
    Linear,
    Mlp { hidden: usize, activation: Activation },
    /// Kernel expansion over the training points of the fit.
    KernelMachine { kernel: KernelSpec },
}

impl ScorerFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ScorerFamily::Linear => "linear",
            ScorerFamily::Mlp { .. } => "mlp",
            ScorerFamily::KernelMachine { .. } => "kernel",
        }
    }
}

/// A score function `x -> (f_1(x), ..., f_C(x))`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    Linear {
        /// `C x d`.
        weights: Array2<f64>,
        bias: Array1<f64>,
    },
    Mlp {
        /// `h x d`.
        w1: Array2<f64>,
        b1: Array1<f64>,
        /// `C x h`.
        w2: Array2<f64>,
        b2: Array1<f64>,
        activation: Activation,
    },
    KernelExpansion {
        /// `m x d`.
        anchors: Array2<f64>,
        /// `m x C`.
        alpha: Array2<f64>,
        bias: Array1<f64>,
        kernel: KernelSpec,
    },
}

impl Scorer {
    /// The all-zero linear scorer.
    pub fn zero_linear(dim: usize, num_classes: usize) -> Scorer {
        Scorer::Linear {
            weights: Array2::zeros((num_classes, dim)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Scorer::Linear { bias, .. } => bias.len(),
            Scorer::Mlp { b2, .. } => b2.len(),
            Scorer::KernelExpansion { bias, .. } => bias.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Scorer::Linear { weights, .. } => weights.ncols(),
            Scorer::Mlp { w1, .. } => w1.ncols(),
            Scorer::KernelExpansion { anchors, .. } => anchors.ncols(),
        }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let xv = ArrayView1::from(x);
        match self {
            Scorer::Linear { weights, bias } => (weights.dot(&xv) + bias).to_vec(),
            Scorer::Mlp {
                w1,
                b1,
                w2,
                b2,
                activation,
            } => {
                let hidden = (w1.dot(&xv) + b1).mapv(|z| activation.apply(z));
                (w2.dot(&hidden) + b2).to_vec()
            }
            Scorer::KernelExpansion {
                anchors,
                alpha,
                bias,
                kernel,
            } => {
                let mut s = bias.to_vec();
                for (j, anchor) in anchors.outer_iter().enumerate() {
                    let k = kernel.eval(anchor.as_slice().expect("contiguous"), x);
                    for (c, sc) in s.iter_mut().enumerate() {
                        *sc += alpha[[j, c]] * k;
                    }
                }
                s
            }
        }
    }

    /// `f_y(x) - max_{y' != y} f_{y'}(x)`.
    pub fn margin(&self, x: &[f64], y: usize) -> Result<f64> {
        margin_of_scores(&self.scores(x), y)
    }

    /// `argmax_y f_y(x)`, lowest index on ties.
    pub fn classify(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    /// Whether every parameter is finite.
    pub fn is_finite(&self) -> bool {
        match self {
            Scorer::Linear { weights, bias } => {
                weights.iter().chain(bias.iter()).all(|v| v.is_finite())
            }
            Scorer::Mlp { w1, b1, w2, b2, .. } => w1
                .iter()
                .chain(b1.iter())
                .chain(w2.iter())
                .chain(b2.iter())
                .all(|v| v.is_finite()),
            Scorer::KernelExpansion { alpha, bias, .. } => {
                alpha.iter().chain(bias.iter()).all(|v| v.is_finite())
            }
        }
    }
}

/// Margin of a score vector for class `y`.
pub fn margin_of_scores(scores: &[f64], y: usize) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::domain("margin needs at least two classes"));
    }
    if y >= scores.len() {
        return Err(Error::domain(format!(
            "class {y} outside 0..{}",
            scores.len()
        )));
    }
    let (_, runner_up) = best_other(scores, y);
    Ok(scores[y] - runner_up)
}

/// Index and value of the largest score among classes other than `y`
/// (lowest index on ties). Requires `scores.len() >= 2`.
pub(crate) fn best_other(scores: &[f64], y: usize) -> (usize, f64) {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for (c, &s) in scores.iter().enumerate() {
        if c != y && (best == usize::MAX || s > best_val) {
            best = c;
            best_val = s;
        }
    }
    (best, best_val)
}

/// Argmax with ties broken by the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    best
}
