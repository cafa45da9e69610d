use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::par;
use crate::rng::{derive_seed, rng_from};
use crate::scorer::margin_of_scores;

/// Above this many points the sign expectation is sampled instead of
/// enumerated.
const EXHAUSTIVE_MAX: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum RademacherClass {
    /// `{x ↦ ⟨w, x⟩ : ‖w‖₂ ≤ B}`; the supremum is `B ‖Σ σᵢ xᵢ‖ / m`.
    LinearBall { radius: f64 },
    /// `{(x, y) ↦ ℓ(γ_W(x, y)) − ℓ(γ_W(anchor)) : ‖W‖_F ≤ B}` for
    /// bias-free linear multiclass scorers `W x`. Without an anchor the
    /// losses are not centred. The supremum is found by projected gradient
    /// ascent, so the estimate is a lower bound.
    LossComposedLinear {
        radius: f64,
        loss: LossSpec,
        anchor: Option<(Vec<f64>, usize)>,
        restarts: usize,
        steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RademacherEstimate {
    pub value: f64,
    /// Zero for exhaustive enumeration.
    pub std_error: f64,
    /// Number of sign vectors averaged.
    pub draws: usize,
    pub exhaustive: bool,
    /// Set when the inner supremum is only approximated from below.
    pub lower_bound: bool,
}

/// Estimates `E_σ sup_f (1/m) Σ σᵢ f(zᵢ)` over the rows of `points`.
/// For `m ≤ 12` all `2^m` sign vectors are enumerated; otherwise `mc_draws`
/// vectors are sampled, draw `t` using stream `t` of `seed`.
pub fn empirical_rademacher(
    points: &Dataset,
    class: &RademacherClass,
    mc_draws: usize,
    seed: u64,
) -> Result<RademacherEstimate> {
    if mc_draws == 0 {
        return Err(Error::domain("mc_draws must be positive"));
    }
    let m = points.len();
    let lower_bound = matches!(class, RademacherClass::LossComposedLinear { .. });
    if m == 0 {
        return Ok(RademacherEstimate {
            value: 0.0,
            std_error: 0.0,
            draws: 0,
            exhaustive: true,
            lower_bound,
        });
    }
    match class {
        RademacherClass::LinearBall { radius } | RademacherClass::LossComposedLinear { radius, .. }
            if !(*radius >= 0.0) =>
        {
            return Err(Error::domain("radius must be nonnegative"))
        }
        RademacherClass::LossComposedLinear { anchor: Some((a, y)), .. }
            if a.len() != points.dim() || *y >= points.num_classes() =>
        {
            return Err(Error::domain("anchor does not match the dataset"))
        }
        RademacherClass::LossComposedLinear { .. } if points.num_classes() < 2 => {
            return Err(Error::domain("loss-composed class needs at least two classes"))
        }
        _ => {}
    }
    let sup = |sigma: &[f64], stream: u64| -> f64 {
        match class {
            RademacherClass::LinearBall { radius } => linear_ball_sup(points, sigma, *radius),
            RademacherClass::LossComposedLinear {
                radius,
                loss,
                anchor,
                restarts,
                steps,
            } => loss_composed_sup(
                points,
                sigma,
                *radius,
                loss,
                anchor.as_ref(),
                *restarts,
                *steps,
                derive_seed(seed, stream),
            ),
        }
    };
    if m <= EXHAUSTIVE_MAX {
        let total = 1usize << m;
        let values = par::map_range(total, |bits| {
            let sigma: Vec<f64> = (0..m)
                .map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect();
            sup(&sigma, bits as u64)
        });
        return Ok(RademacherEstimate {
            value: values.iter().sum::<f64>() / total as f64,
            std_error: 0.0,
            draws: total,
            exhaustive: true,
            lower_bound,
        });
    }
    let values = par::map_range(mc_draws, |t| {
        let mut rng = rng_from(seed, t as u64);
        let sigma: Vec<f64> = (0..m)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        sup(&sigma, t as u64)
    });
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        value: mean,
        std_error: (var / k).sqrt(),
        draws: values.len(),
        exhaustive: false,
        lower_bound,
    })
}

fn linear_ball_sup(points: &Dataset, sigma: &[f64], radius: f64) -> f64 {
    let mut acc = vec![0.0; points.dim()];
    for (i, s) in sigma.iter().enumerate() {
        for (a, x) in acc.iter_mut().zip(points.row(i)) {
            *a += s * x;
        }
    }
    radius * acc.iter().map(|v| v * v).sum::<f64>().sqrt() / sigma.len() as f64
}

struct Composed<'a> {
    points: &'a Dataset,
    sigma: &'a [f64],
    loss: &'a LossSpec,
    anchor: Option<(&'a [f64], usize)>,
    sigma_sum: f64,
    c: usize,
    d: usize,
}

impl Composed<'_> {
    fn scores(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.c)
            .map(|k| w[k * self.d..(k + 1) * self.d].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Adds `coef · ∂ℓ(γ_W(x, y))/∂W` into `grad`; returns `ℓ`.
    fn loss_and_grad(&self, w: &[f64], x: &[f64], y: usize, coef: f64, grad: &mut [f64]) -> f64 {
        let s = self.scores(w, x);
        let gamma = margin_of_scores(&s, y).unwrap_or(0.0);
        let other = (0..self.c)
            .filter(|&k| k != y)
            .fold(None::<usize>, |best, k| match best {
                Some(b) if s[b] >= s[k] => Some(b),
                _ => Some(k),
            })
            .unwrap_or(0);
        let dl = self.loss.derivative(gamma) * coef;
        for j in 0..self.d {
            grad[y * self.d + j] += dl * x[j];
            grad[other * self.d + j] -= dl * x[j];
        }
        self.loss.value(gamma)
    }

    fn value_and_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let m = self.sigma.len() as f64;
        let mut v = 0.0;
        for (i, s) in self.sigma.iter().enumerate() {
            v += s / m * self.loss_and_grad(w, self.points.row(i), self.points.label(i), s / m, grad);
        }
        if let Some((x, y)) = self.anchor {
            let coef = -self.sigma_sum / m;
            v += coef * self.loss_and_grad(w, x, y, coef, grad);
        }
        v
    }
}

fn project(w: &mut [f64], radius: f64) {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        let s = radius / norm;
        w.iter_mut().for_each(|v| *v *= s);
    }
}

#[allow(clippy::too_many_arguments)]
fn loss_composed_sup(
    points: &Dataset,
    sigma: &[f64],
    radius: f64,
    loss: &LossSpec,
    anchor: Option<&(Vec<f64>, usize)>,
    restarts: usize,
    steps: usize,
    seed: u64,
) -> f64 {
    let (c, d) = (points.num_classes(), points.dim());
    let obj = Composed {
        points,
        sigma,
        loss,
        anchor: anchor.map(|(x, y)| (x.as_slice(), *y)),
        sigma_sum: sigma.iter().sum(),
        c,
        d,
    };
    let max_norm = (0..points.len())
        .map(|i| points.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(1e-12, f64::max);
    let mut grad = vec![0.0; c * d];
    let mut best = obj.value_and_grad(&vec![0.0; c * d], &mut grad);
    if radius == 0.0 {
        return best;
    }
    let mut rng = rng_from(seed, 0);
    for restart in 0..=restarts {
        let mut w: Vec<f64> = if restart == 0 {
            vec![0.0; c * d]
        } else {
            let mut w: Vec<f64> = (0..c * d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            w.iter_mut().for_each(|v| *v *= radius / n);
            w
        };
        let mut step = radius / max_norm;
        let mut f = obj.value_and_grad(&w, &mut grad);
        best = best.max(f);
        let mut trial = vec![0.0; c * d];
        let mut trial_grad = vec![0.0; c * d];
        for _ in 0..steps {
            for ((t, wv), g) in trial.iter_mut().zip(&w).zip(&grad) {
                *t = wv + step * g;
            }
            project(&mut trial, radius);
            let ft = obj.value_and_grad(&trial, &mut trial_grad);
            if ft > f {
                std::mem::swap(&mut w, &mut trial);
                std::mem::swap(&mut grad, &mut trial_grad);
                f = ft;
                step *= 1.5;
            } else {
                step *= 0.5;
                if step < 1e-12 * radius / max_norm {
                    break;
                }
            }
        }
        best = best.max(f);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(rows: &[Vec<f64>]) -> Dataset {
        let labels = (0..rows.len()).map(|i| i % 2).collect();
        Dataset::from_rows(rows, labels, 2).unwrap()
    }

    #[test]
    fn single_point_linear_ball() {
        let p = points(&[vec![3.0, 4.0]]);
        let e = empirical_rademacher(&p, &RademacherClass::LinearBall { radius: 2.0 }, 1, 0).unwrap();
        assert_eq!(e.value, 10.0);
        assert!(e.exhaustive);
    }

    #[test]
    fn antipodal_pair_by_enumeration() {
        // σ = (+,+), (−,−) cancel; (+,−), (−,+) give 2‖x‖: mean ‖x‖ / 2 · B.
        let p = points(&[vec![3.0, 4.0], vec![-3.0, -4.0]]);
        let e = empirical_rademacher(&p, &RademacherClass::LinearBall { radius: 1.5 }, 1, 0).unwrap();
        assert!((e.value - 1.5 * 5.0 / 2.0).abs() < 1e-12);
        assert_eq!(e.draws, 4);
    }

    #[test]
    fn zero_radius_gives_zero() {
        let p = points(&[vec![1.0], vec![2.0], vec![-0.5]]);
        let e = empirical_rademacher(&p, &RademacherClass::LinearBall { radius: 0.0 }, 1, 0).unwrap();
        assert_eq!(e.value, 0.0);
        let composed = RademacherClass::LossComposedLinear {
            radius: 0.0,
            loss: LossSpec::MulticlassLogistic,
            anchor: Some((vec![0.0], 0)),
            restarts: 2,
            steps: 10,
        };
        let e = empirical_rademacher(&p, &composed, 1, 0).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.lower_bound);
    }

    #[test]
    fn enumeration_matches_brute_force_closed_form() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 - 2.0, (i * i) as f64 * 0.3]).collect();
        let p = points(&rows);
        let e = empirical_rademacher(&p, &RademacherClass::LinearBall { radius: 1.0 }, 1, 0).unwrap();
        let mut total = 0.0;
        for bits in 0..32u32 {
            let mut s = [0.0, 0.0];
            for (i, r) in rows.iter().enumerate() {
                let sign = if bits & (1 << i) != 0 { 1.0 } else { -1.0 };
                s[0] += sign * r[0];
                s[1] += sign * r[1];
            }
            total += (s[0] * s[0] + s[1] * s[1]).sqrt() / 5.0;
        }
        assert!((e.value - total / 32.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_within_three_standard_errors() {
        let rows: Vec<Vec<f64>> = (0..14).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()]).collect();
        let p = points(&rows);
        let class = RademacherClass::LinearBall { radius: 1.0 };
        let mc = empirical_rademacher(&p, &class, 4000, 7).unwrap();
        assert!(!mc.exhaustive);
        let mut total = 0.0;
        for bits in 0..(1u32 << 14) {
            let mut s = [0.0, 0.0];
            for (i, r) in rows.iter().enumerate() {
                let sign = if bits & (1 << i) != 0 { 1.0 } else { -1.0 };
                s[0] += sign * r[0];
                s[1] += sign * r[1];
            }
            total += (s[0] * s[0] + s[1] * s[1]).sqrt() / 14.0;
        }
        let exact = total / (1u32 << 14) as f64;
        assert!((mc.value - exact).abs() <= 3.0 * mc.std_error);
    }

    #[test]
    fn loss_composed_is_nonnegative_and_grows_with_radius() {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64 * 1.3).sin(), (i as f64).cos()]).collect();
        let p = points(&rows);
        let class = |radius| RademacherClass::LossComposedLinear {
            radius,
            loss: LossSpec::MulticlassLogistic,
            anchor: Some((vec![0.1, 0.2], 1)),
            restarts: 3,
            steps: 60,
        };
        let small = empirical_rademacher(&p, &class(0.5), 1, 3).unwrap();
        let large = empirical_rademacher(&p, &class(4.0), 1, 3).unwrap();
        assert!(small.value >= 0.0);
        assert!(large.value > small.value);
    }
}
