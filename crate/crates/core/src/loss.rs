//! Margin-based surrogate losses.
//!
//! Every loss here is a function of the multiclass margin
//! `γ = f_y(x) - max_{y' != y} f_{y'}(x)` only, is nonincreasing in `γ`, and
//! is Lipschitz in `γ` with the constant reported by
//! [`LossSpec::lipschitz`].

/// Surrogate loss acting on the margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    /// `ln(1 + exp(-γ))`. Lipschitz constant 1.
    MulticlassLogistic,
    /// `max(0, target - γ)`. Lipschitz constant 1.
    MarginHinge { margin_target: f64 },
    /// Softplus-smoothed hinge at margin 1:
    /// `τ ln(1 + exp((1 - γ) / τ))`. Lipschitz constant 1.
    SmoothedMargin { temperature: f64 },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::MulticlassLogistic
    }
}

/// Numerically stable `ln(1 + e^z)`.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic sigmoid `1 / (1 + e^{-z})`, stable for large `|z|`.
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LossSpec {
    pub fn value(&self, margin: f64) -> f64 {
        match *self {
            LossSpec::MulticlassLogistic => softplus(-margin),
            LossSpec::MarginHinge { margin_target } => (margin_target - margin).max(0.0),
            LossSpec::SmoothedMargin { temperature } => {
                temperature * softplus((1.0 - margin) / temperature)
            }
        }
    }

    /// `dℓ/dγ` (a subgradient for the hinge; 0 at the kink).
    pub fn derivative(&self, margin: f64) -> f64 {
        match *self {
            LossSpec::MulticlassLogistic => -sigmoid(-margin),
            LossSpec::MarginHinge { margin_target } => {
                if margin < margin_target {
                    -1.0
                } else {
                    0.0
                }
            }
            LossSpec::SmoothedMargin { temperature } => -sigmoid((1.0 - margin) / temperature),
        }
    }

    /// Lipschitz constant of the loss in the margin, `L_ℓ`.
    pub fn lipschitz(&self) -> f64 {
        1.0
    }

    /// Whether the loss is differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, LossSpec::MarginHinge { .. })
    }
}
