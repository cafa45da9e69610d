use crate::error::{Error, Result};

/// Weak-margin fit `P(|γ| ≤ t) ≤ c t^α` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginFit {
    /// `None` when fewer than two grid points have a nonzero CDF, so no
    /// exponent can be fitted.
    pub alpha: Option<f64>,
    /// Inflated so that `c t^α` dominates the CDF on every grid point.
    pub c: f64,
    /// RMS log-space residual of the least-squares fit before inflation.
    pub residual: f64,
    /// Intercept of the least-squares fit before inflation.
    pub fitted_c: f64,
}

impl MarginFit {
    /// `c t^α`; without an exponent the bound is the constant `c`.
    pub fn eval(&self, t: f64) -> f64 {
        match self.alpha {
            Some(a) => self.c * t.powf(a),
            None => self.c,
        }
    }
}

/// 20 log-spaced points on `[0.1, 1]`.
pub fn default_margin_grid() -> Vec<f64> {
    (0..20).map(|i| 10f64.powf(-1.0 + i as f64 / 19.0)).collect()
}

/// Fraction of `sorted_abs` that is `≤ t`.
fn cdf(sorted_abs: &[f64], t: f64) -> f64 {
    sorted_abs.partition_point(|&v| v <= t) as f64 / sorted_abs.len() as f64
}

/// Log-log least squares of the empirical CDF of `|γ|` against `t`, then
/// minimal inflation of `c` to an upper bound on the grid.
pub fn fit_weak_margin(margins: &[f64], grid: &[f64]) -> Result<MarginFit> {
    if margins.len() < 10 {
        return Err(Error::domain(format!("need at least 10 margins, got {}", margins.len())));
    }
    if grid.is_empty() || grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::domain("grid must be nonempty and strictly positive"));
    }
    if margins.iter().any(|m| !m.is_finite()) {
        return Err(Error::domain("non-finite margin"));
    }
    if margins.iter().all(|&m| m == 0.0) {
        return Err(Error::DegenerateFit("all margins are zero".into()));
    }
    let mut abs: Vec<f64> = margins.iter().map(|m| m.abs()).collect();
    abs.sort_unstable_by(f64::total_cmp);
    let values: Vec<(f64, f64)> = grid.iter().map(|&t| (t, cdf(&abs, t))).collect();
    let pts: Vec<(f64, f64)> = values
        .iter()
        .filter(|(_, f)| *f > 0.0)
        .map(|&(t, f)| (t.ln(), f.ln()))
        .collect();
    let max_cdf = values.iter().map(|v| v.1).fold(0.0, f64::max);
    let distinct_t = pts.windows(2).any(|w| w[0].0 != w[1].0);
    if pts.len() < 2 || !distinct_t {
        return Ok(MarginFit {
            alpha: None,
            c: max_cdf,
            residual: 0.0,
            fitted_c: max_cdf,
        });
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    // A nonpositive slope cannot come from a CDF that grows on the grid;
    // keep the exponent positive as the condition requires.
    let alpha = slope.max(1e-9);
    let fitted_c = intercept.exp();
    let needed = values
        .iter()
        .map(|&(t, f)| f / t.powf(alpha))
        .fold(0.0, f64::max);
    let mut c = fitted_c.max(needed);
    // f / t^α · t^α can round below f.
    while values.iter().any(|&(t, f)| c * t.powf(alpha) < f) {
        c *= 1.0 + f64::EPSILON;
    }
    Ok(MarginFit {
        alpha: Some(alpha),
        c,
        residual,
        fitted_c,
    })
}
