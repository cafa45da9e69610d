use crate::erm::dot;

/// Positive-semidefinite kernel on real vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `exp(-‖a - b‖² / (2σ²))`; bounded by 1.
    Gaussian { bandwidth: f64 },
    /// `(⟨a, b⟩ + offset)^degree`.
    Polynomial { degree: u32, offset: f64 },
    /// `⟨a, b⟩`.
    Linear,
}

impl KernelSpec {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                gaussian_from_sq_dist(sq_dist(a, b), bandwidth)
            }
            KernelSpec::Polynomial { degree, offset } => {
                (dot(a, b) + offset).powi(degree as i32)
            }
            KernelSpec::Linear => dot(a, b),
        }
    }

    /// Uniform bound `M` on `|k(a, b)|`, when one holds on all inputs.
    pub fn bound(&self) -> Option<f64> {
        match self {
            KernelSpec::Gaussian { .. } => Some(1.0),
            _ => None,
        }
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn gaussian_from_sq_dist(sq: f64, bandwidth: f64) -> f64 {
    (-sq / (2.0 * bandwidth * bandwidth)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_basics() {
        let k = KernelSpec::Gaussian { bandwidth: 2.0 };
        assert_eq!(k.eval(&[1.0, 2.0], &[1.0, 2.0]), 1.0);
        let v = k.eval(&[0.0, 0.0], &[2.0, 0.0]);
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(k.eval(&[0.3, -1.0], &[2.0, 5.0]), k.eval(&[2.0, 5.0], &[0.3, -1.0]));
        assert_eq!(k.bound(), Some(1.0));
    }

    #[test]
    fn polynomial_and_linear() {
        let p = KernelSpec::Polynomial {
            degree: 3,
            offset: 1.0,
        };
        assert_eq!(p.eval(&[1.0, 2.0], &[3.0, -1.0]), 8.0);
        assert_eq!(KernelSpec::Linear.eval(&[1.0, 2.0], &[3.0, -1.0]), 1.0);
        assert_eq!(p.bound(), None);
    }
}
