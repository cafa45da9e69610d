use crate::error::{Error, Result};

/// Local function classes with closed-form complexity bounds. `constant`
/// stands in for the unspecified universal constant, so results are
/// order-level only.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionClassSpec {
    /// Per-class RKHS functions with an ℓ∞ norm bound.
    RkhsInf {
        bound: f64,
        num_classes: usize,
        constant: f64,
    },
    /// Per-class RKHS functions with an ℓ2 norm bound.
    RkhsL2 {
        bound: f64,
        num_classes: usize,
        constant: f64,
    },
    /// `L`-layer network with 1-Lipschitz activations. `widths[l]` is the
    /// output width of layer `l + 1`; the last must equal `num_classes`.
    FeedForward {
        widths: Vec<usize>,
        spectral: Vec<f64>,
        norm21: Vec<f64>,
        input_norm: f64,
        num_classes: usize,
        constant: f64,
    },
}

impl FunctionClassSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            FunctionClassSpec::RkhsInf { bound, num_classes, constant }
            | FunctionClassSpec::RkhsL2 { bound, num_classes, constant } => {
                positive(*bound, "bound")?;
                positive(*constant, "constant")?;
                if *num_classes == 0 {
                    return Err(Error::domain("num_classes must be positive"));
                }
            }
            FunctionClassSpec::FeedForward {
                widths,
                spectral,
                norm21,
                input_norm,
                num_classes,
                constant,
            } => {
                if widths.is_empty() || widths.len() != spectral.len() || widths.len() != norm21.len() {
                    return Err(Error::domain("need one width, spectral and (2,1) bound per layer"));
                }
                if widths.last() != Some(num_classes) {
                    return Err(Error::domain("last layer width must equal num_classes"));
                }
                if widths.contains(&0) {
                    return Err(Error::domain("layer widths must be positive"));
                }
                for (&s, &b) in spectral.iter().zip(norm21) {
                    positive(s, "spectral bound")?;
                    positive(b, "(2,1) bound")?;
                }
                positive(*input_norm, "input norm")?;
                positive(*constant, "constant")?;
            }
        }
        Ok(())
    }

    /// `B̃ = max‖x‖ Π s_l` for networks, `B` otherwise.
    pub fn scale(&self) -> f64 {
        match self {
            FunctionClassSpec::RkhsInf { bound, .. } | FunctionClassSpec::RkhsL2 { bound, .. } => *bound,
            FunctionClassSpec::FeedForward { spectral, input_norm, .. } => {
                input_norm * spectral.iter().product::<f64>()
            }
        }
    }
}

/// Upper bound on the expected empirical Rademacher complexity of the
/// centred local loss class:
///
/// ```text
/// ℓ∞ RKHS:  C (√|Y| L_ℓ B ln(n+1)^{3/2} / √N + 2δB)
/// ℓ2 RKHS:  C (L_ℓ B ln(n|Y|)^{3/2} / √N + 2δB)
/// network:  C (L_ℓ B̃ √κ ln(d_max) L^{3/4} ln(L_ℓ B̃ √n)^{3/2} / √N + 2δB̃)
/// ```
///
/// with `κ = max b_l / s_l`. Logarithms of arguments below 1 are clamped at
/// zero.
pub fn class_complexity_bound(
    spec: &FunctionClassSpec,
    loss_lipschitz: f64,
    n_retrieved: f64,
    n: f64,
    delta: f64,
) -> Result<f64> {
    spec.validate()?;
    if !(n_retrieved >= 1.0) {
        return Err(Error::domain("n_retrieved must be at least 1"));
    }
    if !(n > 0.0) || !(delta >= 0.0) || !(loss_lipschitz >= 0.0) {
        return Err(Error::domain("n must be positive, delta and L_l nonnegative"));
    }
    let log32 = |v: f64| v.ln().max(0.0).powf(1.5);
    let root_n = n_retrieved.sqrt();
    let b = spec.scale();
    let value = match spec {
        FunctionClassSpec::RkhsInf { num_classes, constant, .. } => {
            constant
                * ((*num_classes as f64).sqrt() * loss_lipschitz * b * log32(n + 1.0) / root_n
                    + 2.0 * delta * b)
        }
        FunctionClassSpec::RkhsL2 { num_classes, constant, .. } => {
            constant * (loss_lipschitz * b * log32(n * *num_classes as f64) / root_n + 2.0 * delta * b)
        }
        FunctionClassSpec::FeedForward {
            widths,
            spectral,
            norm21,
            constant,
            ..
        } => {
            let kappa = norm21
                .iter()
                .zip(spectral)
                .map(|(b, s)| b / s)
                .fold(0.0, f64::max);
            let d_max = *widths.iter().max().expect("validated nonempty") as f64;
            let layers = widths.len() as f64;
            constant
                * (loss_lipschitz
                    * b
                    * kappa.sqrt()
                    * d_max.ln()
                    * layers.powf(0.75)
                    * log32(loss_lipschitz * b * n.sqrt())
                    / root_n
                    + 2.0 * delta * b)
        }
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inf() -> FunctionClassSpec {
        FunctionClassSpec::RkhsInf {
            bound: 1.0,
            num_classes: 2,
            constant: 1.0,
        }
    }

    #[test]
    fn rkhs_inf_example() {
        let v = class_complexity_bound(&inf(), 1.0, 1.0, std::f64::consts::E - 1.0, 0.0).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn quadrupling_n_halves_first_summand() {
        let specs = [
            inf(),
            FunctionClassSpec::RkhsL2 {
                bound: 2.0,
                num_classes: 3,
                constant: 1.0,
            },
            FunctionClassSpec::FeedForward {
                widths: vec![16, 3],
                spectral: vec![2.0, 1.5],
                norm21: vec![6.0, 3.0],
                input_norm: 4.0,
                num_classes: 3,
                constant: 1.0,
            },
        ];
        for spec in specs {
            let a = class_complexity_bound(&spec, 1.0, 25.0, 1000.0, 0.0).unwrap();
            let b = class_complexity_bound(&spec, 1.0, 100.0, 1000.0, 0.0).unwrap();
            assert!(a > 0.0);
            assert!((b / a - 0.5).abs() < 1e-12);
            // δ contributes exactly 2δB.
            let with_delta = class_complexity_bound(&spec, 1.0, 25.0, 1000.0, 0.1).unwrap();
            assert!((with_delta - a - 0.2 * spec.scale()).abs() < 1e-12);
        }
    }

    #[test]
    fn feed_forward_hand_value() {
        let spec = FunctionClassSpec::FeedForward {
            widths: vec![8, 2],
            spectral: vec![2.0, 1.0],
            norm21: vec![4.0, 3.0],
            input_norm: 1.5,
            num_classes: 2,
            constant: 1.0,
        };
        let b = 3.0;
        let want = b * 3f64.sqrt() * 8f64.ln() * 2f64.powf(0.75) * (b * 10.0).ln().powf(1.5) / 2.0;
        let got = class_complexity_bound(&spec, 1.0, 4.0, 100.0, 0.0).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        let bad = FunctionClassSpec::FeedForward {
            widths: vec![8, 3],
            spectral: vec![1.0, 1.0],
            norm21: vec![1.0, 1.0],
            input_norm: 1.0,
            num_classes: 2,
            constant: 1.0,
        };
        assert!(class_complexity_bound(&bad, 1.0, 4.0, 10.0, 0.0).is_err());
        assert!(class_complexity_bound(&inf(), 1.0, 0.0, 10.0, 0.0).is_err());
    }
}
